//! A small interpreter for the Python subset that typical `main` functions use.
//!
//! It backs the `cc-stub-worker` binary so the execution harness can be
//! exercised without a Python runtime. Integers are 64-bit; overflow raises
//! instead of promoting.

mod interp;
mod lexer;
mod parser;

use std::fmt;

use serde_json::Value;

use super::{CaseRequest, CaseResponse, ResponseStatus};

pub use interp::Interpreter;

/// Thread stack size for interpretation; deep recursion lives here.
pub const STACK_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum StubError {
    Syntax { line: usize, message: String },
    /// A raised exception: Python-style class name plus message.
    Raised { kind: String, message: String },
}

impl StubError {
    pub fn syntax(line: usize, message: &str) -> Self {
        StubError::Syntax {
            line,
            message: message.to_string(),
        }
    }

    pub fn raised(kind: &str, message: impl Into<String>) -> Self {
        StubError::Raised {
            kind: kind.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for StubError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StubError::Syntax { line, message } => write!(f, "SyntaxError: line {line}: {message}"),
            StubError::Raised { kind, message } if message.is_empty() => write!(f, "{kind}"),
            StubError::Raised { kind, message } => write!(f, "{kind}: {message}"),
        }
    }
}

impl std::error::Error for StubError {}

/// Why a program produced no value.
#[derive(Debug, Clone, PartialEq)]
pub enum RunFailure {
    NoMain,
    Unserializable(String),
    Error(StubError),
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunFailure::NoMain => write!(f, "no-main"),
            RunFailure::Unserializable(what) => write!(f, "unserializable: {what}"),
            RunFailure::Error(e) => write!(f, "{e}"),
        }
    }
}

/// Defines the module in `code`, calls `main(*args)` and converts the result.
pub fn run_program(code: &str, args: &[Value]) -> Result<Value, RunFailure> {
    let tokens = lexer::tokenize(code).map_err(RunFailure::Error)?;
    let module = parser::parse(tokens).map_err(RunFailure::Error)?;
    let mut interp = Interpreter::new();
    interp.exec_module(&module).map_err(RunFailure::Error)?;
    let main = interp.global("main").ok_or(RunFailure::NoMain)?;
    if !main.is_callable() {
        return Err(RunFailure::NoMain);
    }
    let args = args.iter().map(interp::Val::from_json).collect();
    let out = interp.call(&main, args, Vec::new()).map_err(RunFailure::Error)?;
    out.to_json().map_err(RunFailure::Unserializable)
}

/// Answers one protocol request.
pub fn run_request(req: &CaseRequest) -> CaseResponse {
    match run_program(&req.code, &req.args) {
        Ok(value) => CaseResponse {
            case_id: req.case_id.clone(),
            status: ResponseStatus::Ok,
            value: Some(value),
            error: None,
        },
        Err(failure) => CaseResponse {
            case_id: req.case_id.clone(),
            status: ResponseStatus::Error,
            value: None,
            error: Some(failure.to_string()),
        },
    }
}

/// Same as [`run_request`] but on a thread with a large stack.
pub fn run_request_on_big_stack(req: CaseRequest) -> CaseResponse {
    let case_id = req.case_id.clone();
    std::thread::Builder::new()
        .stack_size(STACK_BYTES)
        .spawn(move || run_request(&req))
        .ok()
        .and_then(|h| h.join().ok())
        .unwrap_or_else(|| CaseResponse {
            case_id,
            status: ResponseStatus::Error,
            value: None,
            error: Some("interpreter crashed".into()),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn run(code: &str, args: Value) -> Result<Value, RunFailure> {
        let args = args.as_array().cloned().unwrap_or_default();
        let code = code.to_string();
        std::thread::Builder::new()
            .stack_size(STACK_BYTES)
            .spawn(move || run_program(&code, &args))
            .unwrap()
            .join()
            .unwrap()
    }

    #[test]
    fn loop_and_multiply_agree() {
        let a = "def main(a, b):\n    total = 0\n    for _ in range(b):\n        total += a\n    return total\n";
        let b = "def main(a, b):\n    return a * b\n";
        for (x, y) in [(3, 4), (0, 9), (-2, 5), (7, 0)] {
            assert_eq!(run(a, json!([x, y])).unwrap(), run(b, json!([x, y])).unwrap());
        }
    }

    #[test]
    fn recursion_and_memo() {
        let code = r#"
def main(n):
    memo = {}
    def fib(k):
        if k < 2:
            return k
        if k in memo:
            return memo[k]
        memo[k] = fib(k - 1) + fib(k - 2)
        return memo[k]
    return fib(n)
"#;
        assert_eq!(run(code, json!([50])).unwrap(), json!(12586269025i64));
    }

    #[test]
    fn python_division_semantics() {
        let code = "def main(a, b):\n    return [a // b, a % b, a / b]\n";
        assert_eq!(run(code, json!([-7, 2])).unwrap(), json!([-4, 1, -3.5]));
        assert!(matches!(
            run(code, json!([1, 0])),
            Err(RunFailure::Error(StubError::Raised { ref kind, .. })) if kind == "ZeroDivisionError"
        ));
    }

    #[test]
    fn strings_lists_and_comprehensions() {
        let code = r#"
def main(words):
    caps = [w.upper() for w in words if len(w) > 2]
    joined = "-".join(sorted(caps, reverse=True))
    return {"joined": joined, "rev": words[::-1], "pairs": list(zip(words, range(3)))}
"#;
        assert_eq!(
            run(code, json!([["ab", "cde", "fgh"]])).unwrap(),
            json!({"joined": "FGH-CDE", "rev": ["fgh", "cde", "ab"], "pairs": [["ab", 0], ["cde", 1], ["fgh", 2]]})
        );
    }

    #[test]
    fn failure_classes() {
        assert_eq!(run("def helper():\n    return 1\n", json!([])), Err(RunFailure::NoMain));
        assert!(matches!(run("def main(:\n", json!([])), Err(RunFailure::Error(StubError::Syntax { .. }))));
        assert!(matches!(run("def main():\n    return float('nan')\n", json!([])), Err(RunFailure::Unserializable(_))));
        assert!(matches!(run("def main():\n    raise ValueError('bad')\n", json!([])), Err(RunFailure::Error(_))));
        assert!(matches!(run("def main():\n    return main\n", json!([])), Err(RunFailure::Unserializable(_))));
    }

    #[test]
    fn runaway_recursion_is_an_error() {
        let code = "def main():\n    return main()\n";
        let err = run(code, json!([])).unwrap_err();
        assert!(err.to_string().contains("RecursionError"), "{err}");
    }

    #[test]
    fn request_round_trip() {
        let req = CaseRequest {
            code: "def main(x):\n    return str(x) + '!'\n".into(),
            args: vec![json!(5)],
            case_id: "case-3".into(),
        };
        let resp = run_request_on_big_stack(req);
        assert_eq!(resp.case_id, "case-3");
        assert_eq!(resp.value, Some(json!("5!")));
    }
}
