//! Client side of the line-oriented prediction protocol.
//!
//! ```text
//! > SCHEMA age,workclass,hours
//! < OK
//! > PREDICT 2
//! > (41.0, 50.0],Private,Full
//! > (17.0, 41.0],State-gov,Part
//! < 1 -1
//! ```

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use super::{Label, ModelError, Predictor};
use crate::dataset::Instance;
use crate::schema::Schema;

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

impl Connection {
    fn read_line(&mut self) -> Result<String, ModelError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ModelError::Transport(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "bridge closed the connection",
            )));
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    }
}

/// Predictor backed by an external process speaking the bridge protocol.
/// One request is in flight per client; open several clients for parallelism.
pub struct BridgeClient {
    schema: Schema,
    conn: Mutex<Connection>,
    child: Option<Child>,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("features", &self.schema.len())
            .field("child", &self.child.as_ref().map(|c| c.id()))
            .finish()
    }
}

impl BridgeClient {
    pub fn connect_tcp(addr: impl ToSocketAddrs, schema: &Schema) -> Result<Self, ModelError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Self::from_streams(reader, stream, schema)
    }

    /// Launches `program args..` and talks to it over its stdin/stdout.
    pub fn spawn(command: &[String], schema: &Schema) -> Result<Self, ModelError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ModelError::InvalidConfig("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::from_streams(BufReader::new(stdout), stdin, schema)?;
        client.child = Some(child);
        Ok(client)
    }

    /// Performs the schema handshake over already-open streams.
    pub fn from_streams<R, W>(reader: R, writer: W, schema: &Schema) -> Result<Self, ModelError>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut conn = Connection {
            reader: Box::new(reader),
            writer: Box::new(writer),
        };
        let names: Vec<&str> = schema.features().iter().map(|f| f.name.as_str()).collect();
        writeln!(conn.writer, "SCHEMA {}", names.join(","))?;
        conn.writer.flush()?;
        let reply = conn.read_line()?;
        match reply.as_str() {
            "OK" => {}
            r if r.starts_with("ERR") => {
                return Err(ModelError::Remote(r[3..].trim().to_string()))
            }
            r => return Err(ModelError::Protocol(format!("unexpected handshake reply `{r}`"))),
        }
        Ok(BridgeClient {
            schema: schema.clone(),
            conn: Mutex::new(conn),
            child: None,
        })
    }

    fn encode_rows(&self, instances: &[Instance]) -> Result<Vec<u8>, ModelError> {
        let mut out = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for (r, x) in instances.iter().enumerate() {
            if x.len() != self.schema.len() {
                return Err(ModelError::SchemaMismatch(format!(
                    "row {} has {} values, bridge schema has {}",
                    r + 1,
                    x.len(),
                    self.schema.len()
                )));
            }
            out.write_record(x.iter().enumerate().map(|(f, &v)| self.schema.feature(f).render(v)))
                .map_err(|e| ModelError::Protocol(e.to_string()))?;
        }
        out.into_inner()
            .map_err(|e| ModelError::Transport(e.into_error()))
    }
}

impl Predictor for BridgeClient {
    fn predict_batch(&self, instances: &[Instance]) -> Result<Vec<Label>, ModelError> {
        if instances.is_empty() {
            return Ok(Vec::new());
        }
        let body = self.encode_rows(instances)?;
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(conn.writer, "PREDICT {}", instances.len())?;
        conn.writer.write_all(&body)?;
        conn.writer.flush()?;
        let line = conn.read_line()?;
        if let Some(msg) = line.strip_prefix("ERR") {
            return Err(ModelError::Remote(msg.trim().to_string()));
        }
        let labels = line
            .split_whitespace()
            .map(|t| Label::parse(t).ok_or_else(|| ModelError::Protocol(format!("bad label `{t}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        if labels.len() != instances.len() {
            return Err(ModelError::Protocol(format!(
                "{} labels returned for {} rows",
                labels.len(),
                instances.len()
            )));
        }
        Ok(labels)
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            // closing stdin lets a well-behaved server exit on its own
            let conn = self.conn.get_mut().unwrap_or_else(|p| p.into_inner());
            conn.writer = Box::new(io::sink());
            for _ in 0..20 {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(std::time::Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
