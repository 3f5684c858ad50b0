//! Newline-delimited JSON logit protocol.
//!
//! Requests carry an `op` field (`tokenize`, `detokenize`, `next_logits`,
//! `info`); every request gets exactly one response line, in request order.
//! Failures are reported as `{"error": {"code": ..., "message": ...}}`.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::backend::{BackendError, BackendInfo, ImageRef, LogitBackend, LogitQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WireRequest {
    Tokenize { text: String },
    Detokenize { ids: Vec<u32> },
    NextLogits { image: ImageRef, prompt: String, context_ids: Vec<u32> },
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
struct ErrorEnvelope {
    error: WireError,
}

#[derive(Serialize, Deserialize)]
struct IdsResponse {
    ids: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct TextResponse {
    text: String,
}

#[derive(Serialize, Deserialize)]
struct LogitsResponse {
    logits: Vec<f64>,
}

fn error_line(code: &str, message: impl Into<String>) -> String {
    serde_json::to_string(&ErrorEnvelope {
        error: WireError { code: code.to_string(), message: message.into() },
    })
    .expect("error envelope serializes")
}

fn backend_error_line(err: &BackendError) -> String {
    match err {
        BackendError::BadInput(m) => error_line("bad_input", m.clone()),
        BackendError::Remote { code, message } => error_line(code, message.clone()),
        BackendError::Transport(m) => error_line("transport", m.clone()),
        other => error_line("internal", other.to_string()),
    }
}

/// Answers one request line.
pub fn handle_line(backend: &dyn LogitBackend, line: &str) -> String {
    let request: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return error_line("bad_request", e.to_string()),
    };
    let encoded = match request {
        WireRequest::Info => serde_json::to_string(backend.info()),
        WireRequest::Tokenize { text } => match backend.tokenize(&text) {
            Ok(ids) => serde_json::to_string(&IdsResponse { ids }),
            Err(e) => return backend_error_line(&e),
        },
        WireRequest::Detokenize { ids } => match backend.detokenize(&ids) {
            Ok(text) => serde_json::to_string(&TextResponse { text }),
            Err(e) => return backend_error_line(&e),
        },
        WireRequest::NextLogits { image, prompt, context_ids } => {
            let query = LogitQuery { image: &image, prompt: &prompt, context_ids: &context_ids };
            match backend.next_logits(&query) {
                Ok(logits) => serde_json::to_string(&LogitsResponse { logits }),
                Err(e) => return backend_error_line(&e),
            }
        }
    };
    encoded.unwrap_or_else(|e| error_line("internal", e.to_string()))
}

/// Serves requests from `reader` until end of input.
pub fn serve_stream<R: BufRead, W: Write>(
    backend: &dyn LogitBackend,
    reader: R,
    mut writer: W,
) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_line(backend, &line);
        writer.write_all(response.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts TCP connections forever, one thread per connection.
pub fn serve_tcp(backend: Arc<dyn LogitBackend>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let backend = Arc::clone(&backend);
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(e) => {
                    log::warn!("failed to clone connection: {e}");
                    return;
                }
            };
            if let Err(e) = serve_stream(backend.as_ref(), reader, stream) {
                log::debug!("connection closed: {e}");
            }
        });
    }
    Ok(())
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

impl Connection {
    fn send(&mut self, request: &WireRequest) -> Result<(), BackendError> {
        let mut line = serde_json::to_string(request).map_err(|e| BackendError::Transport(e.to_string()))?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .map_err(|e| BackendError::Transport(e.to_string()))
    }

    fn flush(&mut self) -> Result<(), BackendError> {
        self.writer.flush().map_err(|e| BackendError::Transport(e.to_string()))
    }

    fn receive<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T, BackendError> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if n == 0 {
            return Err(BackendError::Transport("connection closed".into()));
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| BackendError::Transport(format!("malformed response: {e}")))?;
        if let Some(err) = value.get("error") {
            let err: WireError = serde_json::from_value(err.clone())
                .map_err(|e| BackendError::Transport(format!("malformed error: {e}")))?;
            return Err(match err.code.as_str() {
                "bad_input" => BackendError::BadInput(err.message),
                _ => BackendError::Remote { code: err.code, message: err.message },
            });
        }
        serde_json::from_value(value).map_err(|e| BackendError::Transport(format!("unexpected response: {e}")))
    }

    fn call<T: for<'de> Deserialize<'de>>(&mut self, request: &WireRequest) -> Result<T, BackendError> {
        self.send(request)?;
        self.flush()?;
        self.receive()
    }
}

/// Client side of the protocol over any byte stream.
pub struct WireBackend {
    conn: Mutex<Connection>,
    info: BackendInfo,
    child: Option<Child>,
}

impl WireBackend {
    pub fn from_stream(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Self, BackendError> {
        let mut conn = Connection { reader: Box::new(reader), writer: Box::new(writer) };
        let info: BackendInfo = conn.call(&WireRequest::Info)?;
        Ok(Self { conn: Mutex::new(conn), info, child: None })
    }

    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, BackendError> {
        let stream = TcpStream::connect(addr).map_err(|e| BackendError::Transport(e.to_string()))?;
        stream.set_nodelay(true).ok();
        let reader = BufReader::new(stream.try_clone().map_err(|e| BackendError::Transport(e.to_string()))?);
        Self::from_stream(reader, stream)
    }

    /// Launches `command` and speaks the protocol over its stdin/stdout.
    pub fn spawn(command: &[String]) -> Result<Self, BackendError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::Transport("empty launch command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| BackendError::Transport(format!("cannot launch {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut backend = Self::from_stream(BufReader::new(stdout), stdin)?;
        backend.child = Some(child);
        Ok(backend)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn check_len(&self, logits: Vec<f64>) -> Result<Vec<f64>, BackendError> {
        if logits.len() != self.info.vocab_size {
            return Err(BackendError::WrongVocab { expected: self.info.vocab_size, actual: logits.len() });
        }
        Ok(logits)
    }
}

impl Drop for WireBackend {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn to_request(q: &LogitQuery<'_>) -> WireRequest {
    WireRequest::NextLogits {
        image: q.image.clone(),
        prompt: q.prompt.to_string(),
        context_ids: q.context_ids.to_vec(),
    }
}

impl LogitBackend for WireBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        let r: IdsResponse = self.lock().call(&WireRequest::Tokenize { text: text.to_string() })?;
        Ok(r.ids)
    }

    fn detokenize(&self, ids: &[u32]) -> Result<String, BackendError> {
        let r: TextResponse = self.lock().call(&WireRequest::Detokenize { ids: ids.to_vec() })?;
        Ok(r.text)
    }

    fn next_logits(&self, query: &LogitQuery<'_>) -> Result<Vec<f64>, BackendError> {
        let r: LogitsResponse = self.lock().call(&to_request(query))?;
        self.check_len(r.logits)
    }

    /// Pipelines the whole batch: all requests are written before any
    /// response is read, so a micro-batching server sees them together.
    fn next_logits_batch(&self, queries: &[LogitQuery<'_>]) -> Result<Vec<Vec<f64>>, BackendError> {
        let mut conn = self.lock();
        for q in queries {
            conn.send(&to_request(q))?;
        }
        conn.flush()?;
        let mut out = Vec::with_capacity(queries.len());
        let mut first_err = None;
        // drain every response so the stream stays aligned even after an error
        for _ in queries {
            match conn.receive::<LogitsResponse>() {
                Ok(r) => out.push(r.logits),
                Err(e @ BackendError::Transport(_)) => return Err(e),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        out.into_iter().map(|l| self.check_len(l)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::toy::{ToyImage, ToyLm, ToyLmSpec};

    #[test]
    fn request_shapes() {
        let r: WireRequest = serde_json::from_str(r#"{"op":"info"}"#).unwrap();
        assert_eq!(r, WireRequest::Info);
        let r: WireRequest = serde_json::from_str(
            r#"{"op":"next_logits","image":{"kind":"path","value":"a.png"},"prompt":"hi","context_ids":[1,2]}"#,
        )
        .unwrap();
        assert_eq!(
            r,
            WireRequest::NextLogits {
                image: ImageRef::Path("a.png".into()),
                prompt: "hi".into(),
                context_ids: vec![1, 2]
            }
        );
    }

    #[test]
    fn handle_line_answers_each_op() {
        let lm = ToyLm::new(ToyLmSpec::default());
        let info: Value = serde_json::from_str(&handle_line(&lm, r#"{"op":"info"}"#)).unwrap();
        assert_eq!(info["vocab_size"], 12);
        assert_eq!(info["eos_id"], 0);
        assert_eq!(info["deterministic"], true);

        let ids: Value = serde_json::from_str(&handle_line(&lm, r#"{"op":"tokenize","text":"B"}"#)).unwrap();
        assert_eq!(ids, serde_json::json!({"ids": [2]}));
        let text: Value = serde_json::from_str(&handle_line(&lm, r#"{"op":"detokenize","ids":[2,0]}"#)).unwrap();
        assert_eq!(text, serde_json::json!({"text": "B"}));
    }

    #[test]
    fn errors_use_envelope() {
        let lm = ToyLm::new(ToyLmSpec::default());
        let v: Value = serde_json::from_str(&handle_line(&lm, "not json")).unwrap();
        assert_eq!(v["error"]["code"], "bad_request");
        let v: Value = serde_json::from_str(&handle_line(
            &lm,
            r#"{"op":"next_logits","image":{"kind":"path","value":"x"},"prompt":"","context_ids":[]}"#,
        ))
        .unwrap();
        assert_eq!(v["error"]["code"], "bad_input");
    }

    #[test]
    fn logits_survive_json_exactly() {
        let lm = ToyLm::new(ToyLmSpec::default());
        let img = ToyImage::new("s", "A").to_ref();
        let q = LogitQuery { image: &img, prompt: "Question: q?\nA. x\nB. y", context_ids: &[] };
        let direct = lm.next_logits(&q).unwrap();
        let line = handle_line(&lm, &serde_json::to_string(&to_request(&q)).unwrap());
        let parsed: LogitsResponse = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed.logits, direct);
    }
}
