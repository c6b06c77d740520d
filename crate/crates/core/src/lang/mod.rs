//! The loop-free app language: parsing, type checking and concrete
//! interpretation.

mod interp;
mod syntax;
mod typeck;

use thiserror::Error;

pub use interp::{
    evaluate_invariant, interpret_iteration, CallRecord, ChannelMap, ExecError, Execution,
    UncheckedFn, UncheckedImpls, UncheckedRegistry, UncheckedResult,
};
pub use syntax::{
    parse_program, AssignOp, BinOp, DeviceLine, Expr, ExprKind, Literal, Program, Span, Stmt,
    TypeName, UnOp, UncheckedDecl,
};
pub use typeck::{typecheck, ChannelId, CmpOp, TExpr, TExprKind, TStmt, TUnchecked, TypedProgram};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LangError {
    #[error("{span}: syntax error: {message}")]
    Syntax { span: Span, message: String },
    #[error("{span}: `{construct}` is not supported: apps cannot loop or define functions")]
    Unsupported { span: Span, construct: String },
    #[error("{span}: external function `{name}` must have a name starting with `unchecked`")]
    UncheckedName { span: Span, name: String },
    #[error("{span}: type error: {message}")]
    Type { span: Span, message: String },
    #[error("{span}: {message}")]
    Resolution { span: Span, message: String },
    #[error("{span}: purity error: {message}")]
    Purity { span: Span, message: String },
    #[error("{span}: side-effect error: {message}")]
    SideEffect { span: Span, message: String },
    #[error("{span}: linearity error: {message}")]
    Linearity { span: Span, message: String },
}

impl LangError {
    pub(crate) fn syntax(span: Span, message: impl Into<String>) -> Self {
        LangError::Syntax {
            span,
            message: message.into(),
        }
    }

    pub fn span(&self) -> Span {
        match self {
            LangError::Syntax { span, .. }
            | LangError::Unsupported { span, .. }
            | LangError::UncheckedName { span, .. }
            | LangError::Type { span, .. }
            | LangError::Resolution { span, .. }
            | LangError::Purity { span, .. }
            | LangError::SideEffect { span, .. }
            | LangError::Linearity { span, .. } => *span,
        }
    }
}

/// Parses and type checks `source` for `proto` in one step.
pub fn compile_program(
    source: &str,
    proto: &crate::app::AppPrototype,
) -> Result<TypedProgram, LangError> {
    typecheck(&parse_program(source)?, proto)
}
