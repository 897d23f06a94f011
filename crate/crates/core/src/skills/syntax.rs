//! Syntax gate for function-skill scripts.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

/// How a function skill's body is checked before registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SyntaxChecker {
    /// Runs `program args...` with the script on stdin; exit status 0 means valid.
    Command { program: String, args: Vec<String> },
    /// Built-in check: balanced brackets and terminated string literals.
    Delimiters,
}

impl Default for SyntaxChecker {
    fn default() -> Self {
        SyntaxChecker::python()
    }
}

impl SyntaxChecker {
    /// Full parse with the interpreter's own `ast` module.
    pub fn python() -> Self {
        SyntaxChecker::Command {
            program: "python3".into(),
            args: vec!["-c".into(), "import ast, sys; ast.parse(sys.stdin.read())".into()],
        }
    }

    pub fn check(&self, source: &str) -> Result<(), String> {
        match self {
            SyntaxChecker::Delimiters => check_delimiters(source),
            SyntaxChecker::Command { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::null())
                    .stderr(Stdio::piped())
                    .spawn()
                    .map_err(|e| format!("cannot run syntax checker {program}: {e}"))?;
                child
                    .stdin
                    .take()
                    .expect("piped stdin")
                    .write_all(source.as_bytes())
                    .map_err(|e| e.to_string())?;
                let out = child.wait_with_output().map_err(|e| e.to_string())?;
                if out.status.success() {
                    Ok(())
                } else {
                    let err = String::from_utf8_lossy(&out.stderr);
                    Err(err.lines().last().unwrap_or("syntax error").trim().to_string())
                }
            }
        }
    }
}

fn check_delimiters(src: &str) -> Result<(), String> {
    let mut stack: Vec<(char, usize)> = Vec::new();
    let mut chars = src.chars().enumerate().peekable();
    let mut line = 1;
    while let Some((_, c)) = chars.next() {
        match c {
            '\n' => line += 1,
            '#' => {
                for (_, n) in chars.by_ref() {
                    if n == '\n' {
                        line += 1;
                        break;
                    }
                }
            }
            '"' | '\'' => {
                let quote = c;
                let start = line;
                let mut closed = false;
                while let Some((_, n)) = chars.next() {
                    match n {
                        '\\' => {
                            chars.next();
                        }
                        '\n' => line += 1,
                        _ if n == quote => {
                            closed = true;
                            break;
                        }
                        _ => {}
                    }
                }
                if !closed {
                    return Err(format!("unterminated string starting on line {start}"));
                }
            }
            '(' | '[' | '{' => stack.push((c, line)),
            ')' | ']' | '}' => {
                let want = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                match stack.pop() {
                    Some((open, _)) if open == want => {}
                    Some((open, l)) => return Err(format!("'{open}' from line {l} closed by '{c}' on line {line}")),
                    None => return Err(format!("unmatched '{c}' on line {line}")),
                }
            }
            _ => {}
        }
    }
    match stack.pop() {
        Some((open, l)) => Err(format!("unclosed '{open}' from line {l}")),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delimiters() {
        let c = SyntaxChecker::Delimiters;
        assert!(c.check("def f(x):\n    return [x, {'a': (1)}]\n").is_ok());
        assert!(c.check("print('(')  # )\n").is_ok());
        assert!(c.check("def f(x:\n    return x\n").is_err());
        assert!(c.check("x = 'abc\n").is_err());
        assert!(c.check("x = [1, 2)").is_err());
    }

    #[test]
    fn python_ast() {
        let c = SyntaxChecker::python();
        assert!(c.check("import sys\nprint(sys.argv)\n").is_ok());
        let err = c.check("def f(:\n  pass\n").unwrap_err();
        assert!(err.contains("SyntaxError"), "{err}");
    }
}
