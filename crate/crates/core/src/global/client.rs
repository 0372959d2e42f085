use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use super::protocol::{Ack, AckStatus, Envelope};
use crate::pipeline::{GlobalSink, SinkError};

/// Delivers envelopes to a global node over TCP and waits for each ack.
/// Reconnects once per message after an i/o error; a duplicate ack after a
/// resend counts as delivered.
pub struct TcpSink {
    addr: SocketAddr,
    timeout: Duration,
    conn: Option<(TcpStream, BufReader<TcpStream>)>,
}

impl TcpSink {
    pub fn new(addr: SocketAddr) -> Self {
        Self { addr, timeout: Duration::from_secs(10), conn: None }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn connect(&mut self) -> io::Result<&mut (TcpStream, BufReader<TcpStream>)> {
        if self.conn.is_none() {
            let s = TcpStream::connect_timeout(&self.addr, self.timeout)?;
            s.set_nodelay(true)?;
            s.set_read_timeout(Some(self.timeout))?;
            let r = BufReader::new(s.try_clone()?);
            self.conn = Some((s, r));
        }
        Ok(self.conn.as_mut().expect("just connected"))
    }

    fn round_trip(&mut self, line: &str) -> io::Result<Ack> {
        let (w, r) = self.connect()?;
        w.write_all(line.as_bytes())?;
        let mut buf = String::new();
        if r.read_line(&mut buf)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "global node closed the connection"));
        }
        serde_json::from_str(&buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

impl GlobalSink for TcpSink {
    fn deliver(&mut self, envelope: &Envelope) -> Result<(), SinkError> {
        let line = envelope.to_line();
        let ack = match self.round_trip(&line) {
            Ok(a) => a,
            Err(e) => {
                log::debug!("resending {} after {e}", envelope.seq);
                self.conn = None;
                self.round_trip(&line).inspect_err(|_| self.conn = None)?
            }
        };
        match ack.status {
            AckStatus::Ok | AckStatus::Duplicate => Ok(()),
            AckStatus::Rejected => Err(SinkError::Rejected { seq: envelope.seq, reason: ack.reason.unwrap_or_default() }),
        }
    }
}
