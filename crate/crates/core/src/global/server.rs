//! TCP front end. One reader thread per connection parses nothing itself:
//! lines go to a single writer thread that owns the [`GlobalNode`], and the
//! ack comes back over a reply channel.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{SystemTime, UNIX_EPOCH};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};

use super::node::GlobalNode;
use super::protocol::Ack;
use crate::model::Nanos;

pub fn wall_clock_ns() -> Nanos {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as Nanos).unwrap_or(0)
}

enum Command {
    Line(String, Sender<Ack>),
    Stop,
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    commands: Sender<Command>,
    acceptor: Option<JoinHandle<()>>,
    writer: Option<JoinHandle<GlobalNode>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, finishes queued lines and hands the node back.
    pub fn shutdown(mut self) -> GlobalNode {
        self.stop.store(true, Ordering::SeqCst);
        // wake the acceptor
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let _ = self.commands.send(Command::Stop);
        self.writer.take().expect("writer present").join().expect("writer thread panicked")
    }

    /// Blocks until the acceptor exits (it only does on shutdown).
    pub fn wait(mut self) -> GlobalNode {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let _ = self.commands.send(Command::Stop);
        self.writer.take().expect("writer present").join().expect("writer thread panicked")
    }
}

/// Binds `addr` and serves until [`ServerHandle::shutdown`].
pub fn serve(addr: impl ToSocketAddrs, node: GlobalNode) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let (tx, rx) = unbounded::<Command>();
    let writer = thread::Builder::new().name("global-writer".into()).spawn(move || write_loop(node, rx))?;
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let stop = Arc::clone(&stop);
        let tx = tx.clone();
        thread::Builder::new().name("global-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(s) => {
                        let tx = tx.clone();
                        let peer = s.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                        let spawned = thread::Builder::new().name(format!("conn-{peer}")).spawn(move || {
                            if let Err(e) = connection(s, tx) {
                                log::debug!("connection {peer} ended: {e}");
                            }
                        });
                        if let Err(e) = spawned {
                            log::error!("cannot spawn connection thread: {e}");
                        }
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })?
    };
    log::info!("global node listening on {local}");
    Ok(ServerHandle { addr: local, stop, commands: tx, acceptor: Some(acceptor), writer: Some(writer) })
}

fn write_loop(mut node: GlobalNode, rx: Receiver<Command>) -> GlobalNode {
    while let Ok(cmd) = rx.recv() {
        match cmd {
            Command::Line(line, reply) => {
                let ack = node.ingest_line(&line, wall_clock_ns());
                let _ = reply.send(ack);
            }
            Command::Stop => break,
        }
    }
    node
}

fn connection(stream: TcpStream, tx: Sender<Command>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut out = stream.try_clone()?;
    let reader = BufReader::new(stream);
    let (reply_tx, reply_rx) = bounded(1);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if tx.send(Command::Line(line, reply_tx.clone())).is_err() {
            break;
        }
        let Ok(ack) = reply_rx.recv() else { break };
        out.write_all(ack.to_line().as_bytes())?;
    }
    Ok(())
}
