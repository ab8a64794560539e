//! TCP service scaffolding: an accept loop feeding per-connection
//! threads, with cooperative shutdown.
//!
//! Every service speaks the same framed-message protocol. A connection
//! handler is called once per inbound message and returns the reply to
//! send; the connection stays open until the client closes it or a
//! frame fails to parse fatally.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::wire::{read_frame, write_frame, Message, WireError};

/// How long a service-side connection may sit idle before it is
/// dropped. Generous: clients hold connections open between requests.
const SERVER_IDLE_TIMEOUT: Duration = Duration::from_secs(300);

/// Handles one parsed message, returning the reply.
pub trait ConnectionHandler: Send + Sync + 'static {
    fn handle(&self, msg: Message) -> Message;
}

impl<F> ConnectionHandler for F
where
    F: Fn(Message) -> Message + Send + Sync + 'static,
{
    fn handle(&self, msg: Message) -> Message {
        self(msg)
    }
}

/// A running service: its bound address plus the means to stop it.
pub struct ServiceHandle {
    name: String,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Mutex<Option<JoinHandle<()>>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Signals shutdown and waits for the accept loop to exit. Open
    /// connections finish their current request and then see EOF or
    /// closed sockets; the listening port is released before returning.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        // Poke the accept loop out of its blocking accept().
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(thread) = self.accept_thread.lock().unwrap().take() {
            let _ = thread.join();
        }
    }

    /// Blocks until the service stops (for foreground CLI runs).
    pub fn wait(&self) {
        let handle = self.accept_thread.lock().unwrap().take();
        if let Some(thread) = handle {
            let _ = thread.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if !self.stop.load(Ordering::SeqCst) {
            self.stop();
        }
    }
}

/// Binds `listen` and serves connections on background threads.
pub fn serve(
    name: &str,
    listen: &str,
    handler: Arc<dyn ConnectionHandler>,
) -> std::io::Result<ServiceHandle> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let accept_stop = Arc::clone(&stop);
    let thread_name = name.to_string();
    let accept_thread = std::thread::Builder::new()
        .name(format!("{name}-accept"))
        .spawn(move || accept_loop(&thread_name, listener, accept_stop, handler))
        .expect("spawning the accept thread");
    Ok(ServiceHandle {
        name: name.to_string(),
        addr,
        stop,
        accept_thread: Mutex::new(Some(accept_thread)),
    })
}

fn accept_loop(
    name: &str,
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    handler: Arc<dyn ConnectionHandler>,
) {
    loop {
        let (stream, _) = match listener.accept() {
            Ok(conn) => conn,
            Err(e) => {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                log::warn!("[{name}] accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
                continue;
            }
        };
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let conn_handler = Arc::clone(&handler);
        let conn_stop = Arc::clone(&stop);
        let conn_name = name.to_string();
        let _ = std::thread::Builder::new()
            .name(format!("{name}-conn"))
            .spawn(move || serve_connection(&conn_name, stream, conn_stop, conn_handler));
    }
}

fn serve_connection(
    name: &str,
    mut stream: TcpStream,
    stop: Arc<AtomicBool>,
    handler: Arc<dyn ConnectionHandler>,
) {
    let _ = stream.set_read_timeout(Some(SERVER_IDLE_TIMEOUT));
    let _ = stream.set_nodelay(true);
    while !stop.load(Ordering::SeqCst) {
        let msg = match read_frame(&mut stream) {
            Ok(msg) => msg,
            Err(WireError::Closed) => return,
            Err(WireError::BadJson(reason)) => {
                // Tell the sender what went wrong, then drop the
                // connection: framing is intact but we cannot trust
                // the stream to stay in sync.
                let reply = Message::error("malformed-query", &reason);
                let _ = write_frame(&mut stream, &reply);
                return;
            }
            Err(e) => {
                log::debug!("[{name}] connection error: {e}");
                return;
            }
        };
        let reply = handler.handle(msg);
        if let Err(e) = write_frame(&mut stream, &reply) {
            log::debug!("[{name}] reply failed: {e}");
            return;
        }
    }
}

/// Dials `addr` with a connect timeout, resolving hostnames.
pub fn connect(addr: &str, timeout: Duration) -> std::io::Result<TcpStream> {
    let mut last_err = None;
    for resolved in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&resolved, timeout) {
            Ok(stream) => {
                let _ = stream.set_nodelay(true);
                return Ok(stream);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::InvalidInput, "address resolved to nothing")
    }))
}
