use thiserror::Error;

use crate::tree::TaskKind;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractionError {
    #[error("response contains no definition of `main`")]
    NoMain,
    #[error("response is empty")]
    Empty,
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// True when some line defines a function named `main`.
pub fn has_main_def(text: &str) -> bool {
    text.lines().any(|line| {
        let rest = line.trim_start();
        rest.strip_prefix("def main")
            .map(|tail| tail.trim_start().starts_with('('))
            .unwrap_or(false)
    })
}

/// Fenced blocks in order of appearance; an unclosed fence runs to the end.
fn fenced_blocks(raw: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in raw.lines() {
        if is_fence(line) {
            match current.take() {
                Some(lines) => blocks.push(lines.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    if let Some(lines) = current {
        blocks.push(lines.join("\n"));
    }
    blocks
}

/// Drops blank leading lines and trailing whitespace, keeping indentation.
fn tidy(text: &str) -> String {
    let start = text
        .lines()
        .take_while(|l| l.trim().is_empty())
        .map(|l| l.len() + 1)
        .sum::<usize>()
        .min(text.len());
    text[start..].trim_end().to_string()
}

pub(crate) fn without_fences(raw: &str) -> String {
    raw.lines().filter(|l| !is_fence(l)).collect::<Vec<_>>().join("\n")
}

/// Pulls usable node content out of a chat response.
///
/// Programming responses yield the last fenced block that defines `main`
/// (or the whole response when it is unfenced code defining `main`).
/// Translation responses yield the text with fence markers removed, or the
/// `main` function when the text is wrapped in one. Applying the function to
/// its own output returns that output unchanged.
pub fn extract_content(raw: &str, task_kind: TaskKind) -> Result<String, ExtractionError> {
    let raw = &raw.replace("\r\n", "\n");
    if let Some(block) = fenced_blocks(raw).into_iter().rev().find(|b| has_main_def(b)) {
        return Ok(tidy(&block));
    }
    let stripped = tidy(&without_fences(raw));
    if has_main_def(&stripped) {
        return Ok(stripped);
    }
    match task_kind {
        TaskKind::Programming => Err(ExtractionError::NoMain),
        TaskKind::Translation if stripped.trim().is_empty() => Err(ExtractionError::Empty),
        TaskKind::Translation => Ok(stripped.trim().to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fenced_main_block_is_extracted() {
        let raw = "Here you go:\n```python\ndef main():\n    return \"hello\"\n```\nEnjoy!";
        assert_eq!(
            extract_content(raw, TaskKind::Programming).unwrap(),
            "def main():\n    return \"hello\""
        );
    }

    #[test]
    fn last_block_defining_main_wins() {
        let raw = "```\ndef main(a):\n    return a\n```\ntext\n```\nx = 1\n```\n```py\ndef helper():\n    pass\n\ndef main(a, b):\n    return a * b\n```";
        let out = extract_content(raw, TaskKind::Programming).unwrap();
        assert!(out.starts_with("def helper"));
        assert!(out.contains("return a * b"));
    }

    #[test]
    fn unfenced_code_is_accepted() {
        let raw = "\n\ndef main(x):\n    return x + 1\n\n";
        assert_eq!(
            extract_content(raw, TaskKind::Programming).unwrap(),
            "def main(x):\n    return x + 1"
        );
    }

    #[test]
    fn apology_prose_fails_for_programming() {
        let raw = "I'm sorry, but I can't help with rewriting that function.";
        assert_eq!(extract_content(raw, TaskKind::Programming), Err(ExtractionError::NoMain));
        let raw = "```\nprint('no main here')\n```";
        assert_eq!(extract_content(raw, TaskKind::Programming), Err(ExtractionError::NoMain));
        // `def mainly` is not `def main`
        assert_eq!(
            extract_content("def mainly():\n  pass", TaskKind::Programming),
            Err(ExtractionError::NoMain)
        );
    }

    #[test]
    fn translation_paragraph_is_trimmed() {
        let raw = "   Le chat est sur la table.  \n";
        assert_eq!(
            extract_content(raw, TaskKind::Translation).unwrap(),
            "Le chat est sur la table."
        );
        let raw = "```\nDer Hund schläft.\n```";
        assert_eq!(extract_content(raw, TaskKind::Translation).unwrap(), "Der Hund schläft.");
        assert_eq!(extract_content("  ", TaskKind::Translation), Err(ExtractionError::Empty));
    }

    #[test]
    fn translation_function_is_kept_whole() {
        let raw = "Sure:\n```python\ndef main():\n    return \"Bonjour le monde\"\n```";
        assert_eq!(
            extract_content(raw, TaskKind::Translation).unwrap(),
            "def main():\n    return \"Bonjour le monde\""
        );
    }

    proptest! {
        #[test]
        fn extraction_is_idempotent(
            prefix in "[a-zA-Z .,\n]{0,40}",
            body in "[a-z0-9 +*=\n]{0,40}",
            fenced in any::<bool>(),
            with_main in any::<bool>(),
            programming in any::<bool>(),
        ) {
            let code = if with_main { format!("def main(a):\n    {body}") } else { body.clone() };
            let raw = if fenced { format!("{prefix}\n```python\n{code}\n```\n") } else { format!("{prefix}\n{code}") };
            let kind = if programming { TaskKind::Programming } else { TaskKind::Translation };
            if let Ok(once) = extract_content(&raw, kind) {
                prop_assert_eq!(extract_content(&once, kind), Ok(once.clone()));
            }
        }
    }
}
