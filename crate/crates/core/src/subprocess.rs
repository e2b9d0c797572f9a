//! One-shot request/response exchange with an external adapter process.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug)]
pub(crate) enum ExchangeError {
    Spawn(std::io::Error),
    Timeout(Duration),
    Exit { status: String, stderr: String },
    Io(std::io::Error),
}

impl std::fmt::Display for ExchangeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExchangeError::Spawn(e) => write!(f, "could not start adapter: {e}"),
            ExchangeError::Timeout(d) => write!(f, "adapter timed out after {d:?}"),
            ExchangeError::Exit { status, stderr } => {
                write!(f, "adapter exited with {status}: {}", stderr.trim())
            }
            ExchangeError::Io(e) => write!(f, "adapter pipe error: {e}"),
        }
    }
}

/// Writes `input` to the child's stdin and collects stdout, killing the child
/// when `timeout` elapses.
pub(crate) fn exchange(
    program: &str,
    args: &[String],
    input: Vec<u8>,
    timeout: Duration,
) -> Result<Vec<u8>, ExchangeError> {
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(ExchangeError::Spawn)?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = thread::spawn(move || {
        // a child that exits early closes the pipe; that surfaces via its status
        let _ = stdin.write_all(&input);
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let err_reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });

    let deadline = Instant::now() + timeout;
    let status = loop {
        match child.try_wait().map_err(ExchangeError::Io)? {
            Some(status) => break status,
            None if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ExchangeError::Timeout(timeout));
            }
            None => thread::sleep(Duration::from_millis(5)),
        }
    };
    let _ = writer.join();
    let out = reader.join().expect("reader thread").map_err(ExchangeError::Io)?;
    let stderr = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(ExchangeError::Exit { status: status.to_string(), stderr });
    }
    Ok(out)
}

/// Whether `program` names an existing file or resolves through `PATH`.
pub(crate) fn program_exists(program: &str) -> bool {
    let path = std::path::Path::new(program);
    if path.components().count() > 1 {
        return path.is_file();
    }
    std::env::var_os("PATH")
        .map(|paths| std::env::split_paths(&paths).any(|dir| dir.join(program).is_file()))
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echoes_through_cat() {
        let out = exchange("cat", &[], b"hello".to_vec(), Duration::from_secs(5)).unwrap();
        assert_eq!(out, b"hello");
    }

    #[test]
    fn times_out() {
        let err = exchange("sleep", &["5".into()], vec![], Duration::from_millis(100)).unwrap_err();
        assert!(matches!(err, ExchangeError::Timeout(_)));
    }

    #[test]
    fn missing_program() {
        assert!(!program_exists("definitely-not-a-real-binary-xyz"));
        assert!(program_exists("sh"));
        let err =
            exchange("definitely-not-a-real-binary-xyz", &[], vec![], Duration::from_secs(1)).unwrap_err();
        assert!(matches!(err, ExchangeError::Spawn(_)));
    }
}
