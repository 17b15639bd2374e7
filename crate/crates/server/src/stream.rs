use std::convert::Infallible;

use axum::extract::{Query, State};
use axum::http::HeaderMap;
use axum::response::sse::{Event, KeepAlive, Sse};
use futures::stream::{self, Stream, StreamExt};
use tokio::sync::broadcast::error::RecvError;
use trconsent_core::LogEntry;

use crate::config::Principal;
use crate::error::ApiError;
use crate::routes::{visible, Filter};
use crate::Shared;

fn to_event(entry: &LogEntry) -> Event {
    Event::default()
        .id(entry.seq.to_string())
        .event(entry.event.kind())
        .json_data(entry)
        .expect("log entries serialize")
}

/// Server-sent log entries. A client resumes with `Last-Event-ID` (or
/// `?after=`) and first receives the backlog past that sequence number.
/// A subscriber that falls too far behind is disconnected and is expected
/// to reconnect.
pub async fn events_stream(
    State(svc): State<Shared>,
    who: Principal,
    headers: HeaderMap,
    Query(f): Query<Filter>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let patient = who.scope(f.patient)?;
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok())
        .or(f.after)
        .unwrap_or(0);

    // Subscribing under the engine lock splits the log cleanly between
    // backlog and live entries.
    let (backlog, rx) = {
        let engine = svc.engine();
        let rx = svc.subscribe();
        let backlog: Vec<LogEntry> = engine
            .log()
            .iter()
            .filter(|e| e.seq > after && visible(e, patient.as_ref()))
            .cloned()
            .collect();
        (backlog, rx)
    };

    let live = stream::unfold((rx, patient), |(mut rx, patient)| async move {
        loop {
            match rx.recv().await {
                Ok(entry) if visible(&entry, patient.as_ref()) => return Some((entry, (rx, patient))),
                Ok(_) => continue,
                Err(RecvError::Lagged(_) | RecvError::Closed) => return None,
            }
        }
    });
    let events = stream::iter(backlog)
        .chain(live)
        .filter(move |e| std::future::ready(e.seq > after))
        .map(|e| Ok(to_event(&e)));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
