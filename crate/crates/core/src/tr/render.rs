//! Canonical text form of TR policies.
//!
//! Rules are separated by blank lines so that rule `i` lands on line
//! `3 + 2i`, and parentheses are emitted only where precedence needs them.

use super::ast::{ActionExpr, CondExpr, Term, TrPolicy};

const KEYWORDS: [&str; 6] = ["and", "or", "not", "then", "par", "true"];

fn is_bare_constant(s: &str) -> bool {
    if !s.is_empty() && s.chars().all(|c| c.is_ascii_digit()) {
        return true;
    }
    let mut segments = s.split('.');
    let Some(head) = segments.next() else { return false };
    let ident = |seg: &str, lower: bool| {
        let mut cs = seg.chars();
        cs.next().is_some_and(|c| {
            if lower {
                c.is_ascii_lowercase()
            } else {
                c.is_ascii_alphabetic() || c == '_'
            }
        }) && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
    };
    ident(head, true) && !KEYWORDS.contains(&head) && segments.all(|seg| ident(seg, false))
}

/// Renders a constant so that the parser reads it back unchanged.
pub fn render_constant(s: &str) -> String {
    if is_bare_constant(s) {
        return s.to_owned();
    }
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        if c == '\'' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('\'');
    out
}

fn render_term(t: &Term) -> String {
    match t {
        Term::Var(v) => v.clone(),
        Term::Const(c) => render_constant(c),
        Term::Path { var, field } => format!("{var}.{field}"),
    }
}

fn render_call(name: &str, args: &[Term]) -> String {
    if args.is_empty() {
        return name.to_owned();
    }
    let args: Vec<String> = args.iter().map(render_term).collect();
    format!("{name}({})", args.join(", "))
}

// Binding strength: or = 1, and = 2, not/atoms = 3.
fn cond_prec(c: &CondExpr) -> u8 {
    match c {
        CondExpr::Or(..) => 1,
        CondExpr::And(..) => 2,
        _ => 3,
    }
}

fn wrap(s: String, parens: bool) -> String {
    if parens {
        format!("({s})")
    } else {
        s
    }
}

pub fn render_condition(c: &CondExpr) -> String {
    match c {
        CondExpr::True => "true".to_owned(),
        CondExpr::Atom { predicate, args } => render_call(predicate, args),
        CondExpr::Not(inner) => format!("not {}", wrap(render_condition(inner), cond_prec(inner) < 3)),
        CondExpr::And(a, b) => format!(
            "{} and {}",
            wrap(render_condition(a), cond_prec(a) < 2),
            wrap(render_condition(b), cond_prec(b) <= 2)
        ),
        CondExpr::Or(a, b) => format!(
            "{} or {}",
            render_condition(a),
            wrap(render_condition(b), cond_prec(b) <= 1)
        ),
    }
}

// then = 1, par = 2, call = 3.
fn action_prec(a: &ActionExpr) -> u8 {
    match a {
        ActionExpr::Seq(..) => 1,
        ActionExpr::Par(..) => 2,
        ActionExpr::Call { .. } => 3,
    }
}

pub fn render_action(a: &ActionExpr) -> String {
    match a {
        ActionExpr::Call { name, args } => render_call(name, args),
        ActionExpr::Seq(x, y) => format!(
            "{} then {}",
            render_action(x),
            wrap(render_action(y), action_prec(y) <= 1)
        ),
        ActionExpr::Par(x, y) => format!(
            "{} par {}",
            wrap(render_action(x), action_prec(x) < 2),
            wrap(render_action(y), action_prec(y) <= 2)
        ),
    }
}

pub fn render_tr_policy(p: &TrPolicy) -> String {
    let mut out = format!("tr-policy {}({})\n", p.name, p.params.join(", "));
    for rule in &p.rules {
        out.push('\n');
        out.push_str(&render_condition(&rule.condition));
        out.push_str(" -> ");
        out.push_str(&render_action(&rule.action));
        out.push('\n');
    }
    out
}
