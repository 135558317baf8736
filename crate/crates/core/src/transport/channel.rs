use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use crate::error::{Error, Result};

/// Byte transport for complete frames.
pub trait Channel: Send {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()>;
    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>>;
}

/// In-process channel endpoint.
pub struct MemChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn mem_pair() -> (MemChannel, MemChannel) {
    let (tx_ab, rx_ab) = mpsc::channel();
    let (tx_ba, rx_ba) = mpsc::channel();
    (MemChannel { tx: tx_ab, rx: rx_ba }, MemChannel { tx: tx_ba, rx: rx_ab })
}

impl Channel for MemChannel {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        self.tx.send(frame).map_err(|_| Error::Disconnected)
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>> {
        match self.rx.recv_timeout(timeout) {
            Ok(f) => Ok(f),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(String::new())),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Disconnected),
        }
    }
}

/// TCP channel; frames carry their own length prefix.
pub struct TcpChannel {
    stream: TcpStream,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> Result<TcpChannel> {
        stream.set_nodelay(true)?;
        Ok(TcpChannel { stream })
    }
}

impl Channel for TcpChannel {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        self.stream.write_all(&frame).map_err(io_to_protocol)
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>> {
        self.stream.set_read_timeout(Some(timeout))?;
        let mut len = [0u8; 4];
        self.stream.read_exact(&mut len).map_err(io_to_protocol)?;
        let body = u32::from_be_bytes(len) as usize;
        let mut frame = Vec::with_capacity(4 + body);
        frame.extend_from_slice(&len);
        frame.resize(4 + body, 0);
        self.stream.read_exact(&mut frame[4..]).map_err(io_to_protocol)?;
        Ok(frame)
    }
}

fn io_to_protocol(e: std::io::Error) -> Error {
    use std::io::ErrorKind::*;
    match e.kind() {
        WouldBlock | TimedOut => Error::Timeout(String::new()),
        UnexpectedEof | ConnectionReset | ConnectionAborted | BrokenPipe => Error::Disconnected,
        _ => Error::Io(e),
    }
}
