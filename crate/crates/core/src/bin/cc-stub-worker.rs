//! Protocol worker backed by the built-in Python-subset interpreter.
//!
//! Reads one request line from stdin and writes one response line to stdout.

use std::io::{BufRead, Write};
use std::process::ExitCode;

use consistency_checker::exec::stub::run_request_on_big_stack;
use consistency_checker::exec::CaseRequest;

fn main() -> ExitCode {
    let mut line = String::new();
    if let Err(e) = std::io::stdin().lock().read_line(&mut line) {
        eprintln!("cc-stub-worker: cannot read request: {e}");
        return ExitCode::from(2);
    }
    let request: CaseRequest = match serde_json::from_str(line.trim()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("cc-stub-worker: malformed request: {e}");
            return ExitCode::from(2);
        }
    };
    let response = run_request_on_big_stack(request);
    let mut out = std::io::stdout().lock();
    let encoded = serde_json::to_string(&response).expect("responses always serialize");
    if writeln!(out, "{encoded}").and_then(|_| out.flush()).is_err() {
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}
