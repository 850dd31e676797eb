//! Line-oriented protocol for external hypothesis workers.
//!
//! ```text
//! client: GEAR-EXEC/1                       worker: GEAR-EXEC/1 READY
//! client: LOAD <id> <n>\n<n source bytes>\n  worker: OK <id> | ERR <id> <kind> <message>
//! client: CALL <id> <canonical input>        worker: OK <id> <canonical output>
//!                                                  | UNDEF <id> | TIMEOUT <id>
//!                                                  | ERR <id> <kind> <message>
//! ```
//!
//! Every record is one `\n`-terminated line except the LOAD payload, which is
//! length-prefixed. Ids are echoed back. Messages have newlines replaced by
//! spaces. Error kinds used by this crate: `compile`, `runtime`,
//! `encoding`, `resource`, `unknown-id`, `protocol`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use thiserror::Error;

use super::dsl::{parse_dsl, Program};
use super::interp::eval_program;
use super::{ExecLimits, Outcome};
use crate::values::{parse_value, Value};

pub const PROTOCOL_HELLO: &str = "GEAR-EXEC/1";
pub const PROTOCOL_READY: &str = "GEAR-EXEC/1 READY";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("worker i/o failure: {0}")]
    Io(std::io::Error),
    #[error("worker closed the stream")]
    Closed,
    #[error("unexpected worker reply: {0}")]
    Protocol(String),
    #[error("cannot start worker `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::UnexpectedEof => {
                TransportError::Closed
            }
            _ => TransportError::Io(e),
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadFailure {
    #[error("worker rejected program: {kind}: {message}")]
    Rejected { kind: String, message: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// Client side of one worker connection.
pub struct WorkerConnection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl WorkerConnection {
    /// Connects over arbitrary streams and performs the handshake.
    pub fn over<R, W>(reader: R, writer: W) -> Result<Self, TransportError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut conn = WorkerConnection {
            reader: Box::new(BufReader::new(reader)),
            writer: Box::new(writer),
            child: None,
        };
        conn.handshake()?;
        Ok(conn)
    }

    /// Spawns `program args...` and speaks the protocol on its stdio.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, TransportError> {
        let spawn_err = |source| TransportError::Spawn {
            command: program.to_string(),
            source,
        };
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(spawn_err)?;
        let stdin = child.stdin.take().ok_or(TransportError::Closed)?;
        let stdout = child.stdout.take().ok_or(TransportError::Closed)?;
        let mut conn = WorkerConnection {
            reader: Box::new(BufReader::new(stdout)),
            writer: Box::new(stdin),
            child: Some(child),
        };
        conn.handshake()?;
        Ok(conn)
    }

    fn handshake(&mut self) -> Result<(), TransportError> {
        writeln!(self.writer, "{PROTOCOL_HELLO}")?;
        self.writer.flush()?;
        let reply = self.read_line()?;
        if reply != PROTOCOL_READY {
            return Err(TransportError::Protocol(reply));
        }
        Ok(())
    }

    fn read_line(&mut self) -> Result<String, TransportError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(TransportError::Closed);
        }
        while line.ends_with(['\n', '\r']) {
            line.pop();
        }
        Ok(line)
    }

    pub fn load(&mut self, id: &str, source: &str) -> Result<(), LoadFailure> {
        write!(self.writer, "LOAD {id} {}\n{source}\n", source.len())
            .map_err(TransportError::from)?;
        self.writer.flush().map_err(TransportError::from)?;
        let reply = self.read_line()?;
        let mut parts = reply.splitn(4, ' ');
        match (parts.next(), parts.next()) {
            (Some("OK"), Some(rid)) if rid == id => Ok(()),
            (Some("ERR"), Some(rid)) if rid == id => Err(LoadFailure::Rejected {
                kind: parts.next().unwrap_or("compile").to_string(),
                message: parts.next().unwrap_or_default().to_string(),
            }),
            _ => Err(TransportError::Protocol(reply).into()),
        }
    }

    pub fn call(&mut self, id: &str, input: &Value) -> Result<Outcome, TransportError> {
        writeln!(self.writer, "CALL {id} {input}")?;
        self.writer.flush()?;
        let reply = self.read_line()?;
        let mut parts = reply.splitn(3, ' ');
        let (status, rid) = (parts.next(), parts.next());
        if rid != Some(id) {
            return Err(TransportError::Protocol(reply));
        }
        let rest = parts.next().unwrap_or_default();
        match status {
            Some("OK") => match parse_value(rest) {
                Ok(v) => Ok(Outcome::Defined(v)),
                Err(e) => Ok(Outcome::RuntimeError(format!("encoding: {e}"))),
            },
            Some("UNDEF") => Ok(Outcome::Undefined),
            Some("TIMEOUT") => Ok(Outcome::Timeout),
            Some("ERR") => {
                let (kind, message) = rest.split_once(' ').unwrap_or((rest, ""));
                Ok(match kind {
                    "resource" => Outcome::ResourceExceeded(message.to_string()),
                    _ => Outcome::RuntimeError(format!("{kind}: {message}")),
                })
            }
            _ => Err(TransportError::Protocol(reply)),
        }
    }
}

impl Drop for WorkerConnection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A fixed set of isolated worker sessions. Every session holds every
/// loaded program; calls are spread over sessions with one call in flight
/// per session and results are assembled by input index.
pub struct WorkerPool {
    sessions: Vec<Mutex<WorkerConnection>>,
}

impl WorkerPool {
    pub fn new(sessions: Vec<WorkerConnection>) -> Self {
        WorkerPool {
            sessions: sessions.into_iter().map(Mutex::new).collect(),
        }
    }

    pub fn spawn(size: usize, program: &str, args: &[String]) -> Result<Self, TransportError> {
        let sessions = (0..size.max(1))
            .map(|_| WorkerConnection::spawn(program, args))
            .collect::<Result<_, _>>()?;
        Ok(Self::new(sessions))
    }

    pub fn size(&self) -> usize {
        self.sessions.len()
    }

    pub fn load(&self, id: &str, source: &str) -> Result<(), LoadFailure> {
        for session in &self.sessions {
            let mut conn = session.lock().unwrap_or_else(|p| p.into_inner());
            conn.load(id, source)?;
        }
        Ok(())
    }

    pub fn call(&self, id: &str, input: &Value) -> Result<Outcome, TransportError> {
        let mut conn = self.sessions[0].lock().unwrap_or_else(|p| p.into_inner());
        conn.call(id, input)
    }

    pub fn call_all(&self, id: &str, inputs: &[Value]) -> Result<Vec<Outcome>, TransportError> {
        let n = self.sessions.len();
        let chunk = inputs.len().div_ceil(n).max(1);
        let parts: Vec<Result<Vec<Outcome>, TransportError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .sessions
                .iter()
                .zip(inputs.chunks(chunk))
                .map(|(session, slice)| {
                    scope.spawn(move || {
                        let mut conn = session.lock().unwrap_or_else(|p| p.into_inner());
                        slice.iter().map(|v| conn.call(id, v)).collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or(Err(TransportError::Closed)))
                .collect()
        });
        let mut out = Vec::with_capacity(inputs.len());
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }
}

/// Serves the protocol with the built-in language as the guest language.
/// Runs until EOF. Malformed requests get an ERR reply and the session
/// resynchronizes at the next line.
pub fn serve_dsl<R: BufRead, W: Write>(
    mut reader: R,
    mut writer: W,
    limits: &ExecLimits,
) -> std::io::Result<()> {
    let mut programs: HashMap<String, Program> = HashMap::new();
    let mut line = String::new();
    let mut greeted = false;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let request = line.trim_end_matches(['\n', '\r']);
        if !greeted {
            if request == PROTOCOL_HELLO {
                greeted = true;
                writeln!(writer, "{PROTOCOL_READY}")?;
            } else {
                writeln!(writer, "ERR - protocol expected {PROTOCOL_HELLO}")?;
            }
            writer.flush()?;
            continue;
        }
        let mut parts = request.splitn(3, ' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("LOAD"), Some(id), Some(len)) => {
                let Ok(len) = len.parse::<usize>() else {
                    writeln!(writer, "ERR {id} protocol bad length")?;
                    writer.flush()?;
                    continue;
                };
                let mut buf = vec![0u8; len + 1];
                reader.read_exact(&mut buf)?;
                if buf.pop() != Some(b'\n') {
                    writeln!(writer, "ERR {id} protocol payload not newline-terminated")?;
                    writer.flush()?;
                    continue;
                }
                let id = id.to_string();
                match String::from_utf8(buf) {
                    Err(_) => writeln!(writer, "ERR {id} compile source is not UTF-8")?,
                    Ok(source) => match parse_dsl(&source) {
                        Ok(p) => {
                            programs.insert(id.clone(), p);
                            writeln!(writer, "OK {id}")?;
                        }
                        Err(e) => {
                            writeln!(writer, "ERR {id} compile {}", one_line(&e.to_string()))?
                        }
                    },
                }
            }
            (Some("CALL"), Some(id), Some(input)) => match programs.get(id) {
                None => writeln!(
                    writer,
                    "ERR {id} unknown-id no program loaded under this id"
                )?,
                Some(p) => match parse_value(input) {
                    Err(e) => writeln!(writer, "ERR {id} encoding {}", one_line(&e.to_string()))?,
                    Ok(v) => match eval_program(p, &v, limits) {
                        Outcome::Defined(out) => writeln!(writer, "OK {id} {out}")?,
                        Outcome::Undefined => writeln!(writer, "UNDEF {id}")?,
                        Outcome::Timeout => writeln!(writer, "TIMEOUT {id}")?,
                        Outcome::RuntimeError(m) => {
                            writeln!(writer, "ERR {id} runtime {}", one_line(&m))?
                        }
                        Outcome::ResourceExceeded(m) => {
                            writeln!(writer, "ERR {id} resource {}", one_line(&m))?
                        }
                    },
                },
            },
            (_, id, _) => writeln!(
                writer,
                "ERR {} protocol malformed request",
                id.unwrap_or("-")
            )?,
        }
        writer.flush()?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn connect() -> WorkerConnection {
        let (client_read, server_write) = std::io::pipe().unwrap();
        let (server_read, client_write) = std::io::pipe().unwrap();
        std::thread::spawn(move || {
            let _ = serve_dsl(
                BufReader::new(server_read),
                server_write,
                &ExecLimits::default(),
            );
        });
        WorkerConnection::over(client_read, client_write).unwrap()
    }

    #[test]
    fn load_and_call() {
        let mut conn = connect();
        conn.load("h1", "if contains(x,6) then [6] else [0]")
            .unwrap();
        let out = conn.call("h1", &Value::int_list([6, 1])).unwrap();
        assert_eq!(out, Outcome::Defined(Value::int_list([6])));
        assert_eq!(
            conn.call("h1", &Value::int_list([1, 2])).unwrap(),
            Outcome::Defined(Value::int_list([0]))
        );
    }

    #[test]
    fn compile_failure_is_rejected() {
        let mut conn = connect();
        match conn.load("bad", "fold(+,0,x") {
            Err(LoadFailure::Rejected { kind, .. }) => assert_eq!(kind, "compile"),
            other => panic!("unexpected {other:?}"),
        }
        // The session stays usable.
        conn.load("ok", "x").unwrap();
    }

    #[test]
    fn statuses_cross_the_wire() {
        let mut conn = connect();
        conn.load("d", "x / x").unwrap();
        assert!(matches!(
            conn.call("d", &Value::int(0)).unwrap(),
            Outcome::RuntimeError(_)
        ));
        conn.load("u", "if x == 0 then undefined else x").unwrap();
        assert_eq!(conn.call("u", &Value::int(0)).unwrap(), Outcome::Undefined);
        conn.load("t", "until(\\v -> false, \\v -> v, 0)").unwrap();
        assert_eq!(conn.call("t", &Value::int(0)).unwrap(), Outcome::Timeout);
        assert!(
            matches!(conn.call("nope", &Value::int(0)).unwrap(), Outcome::RuntimeError(m) if m.starts_with("unknown-id"))
        );
    }

    #[test]
    fn multiline_source_payload() {
        let mut conn = connect();
        conn.load("m", "let y = x + 1\nin y * 2 # doubled\n")
            .unwrap();
        assert_eq!(
            conn.call("m", &Value::int(3)).unwrap(),
            Outcome::Defined(Value::int(8))
        );
    }

    #[test]
    fn closed_worker_is_a_transport_error() {
        let (client_read, server_write) = std::io::pipe().unwrap();
        let (server_read, client_write) = std::io::pipe().unwrap();
        let server = std::thread::spawn(move || {
            let mut r = BufReader::new(server_read);
            let mut w = server_write;
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            writeln!(w, "{PROTOCOL_READY}").unwrap();
            // Hang up without answering anything else.
        });
        let mut conn = WorkerConnection::over(client_read, client_write).unwrap();
        server.join().unwrap();
        assert!(matches!(
            conn.call("x", &Value::int(1)),
            Err(TransportError::Closed)
        ));
    }

    #[test]
    fn pool_assembles_by_index() {
        let pool = WorkerPool::new((0..3).map(|_| connect()).collect());
        pool.load("sq", "x * x").unwrap();
        let inputs: Vec<Value> = (0..10).map(Value::int).collect();
        let out = pool.call_all("sq", &inputs).unwrap();
        let expected: Vec<Outcome> = (0..10)
            .map(|i| Outcome::Defined(Value::int(i * i)))
            .collect();
        assert_eq!(out, expected);
    }
}
