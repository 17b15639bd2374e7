//! Teleo-reactive policies: DSL, representation and evaluation.

pub mod ast;
pub mod eval;
pub mod parser;
pub mod render;

pub use ast::{ActionExpr, CondExpr, Substitution, Term, TrPolicy, TrRule};
pub use eval::{eval_condition, plan_action, ActionInvocation, ActionPlan, EvalError, Firing, Selection, TrInstance};
pub use parser::{parse_tr_policy, ParseError, ParseErrorKind};
pub use render::{render_action, render_condition, render_tr_policy};
