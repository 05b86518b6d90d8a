//! Byte-stream channels between two peers.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};

/// Receiving half of an in-process pipe. Reads return 0 once the sender is dropped.
pub struct PipeReader {
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        while self.pos == self.buf.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Sending half of an in-process pipe.
pub struct PipeWriter {
    tx: Sender<Vec<u8>>,
}

impl Write for PipeWriter {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        if data.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(data.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "pipe closed"))?;
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// One end of a duplex channel.
pub struct Endpoint {
    pub reader: Box<dyn Read + Send>,
    pub writer: Box<dyn Write + Send>,
}

/// Two connected in-process endpoints.
pub fn duplex_pipe() -> (Endpoint, Endpoint) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    let end = |tx, rx| Endpoint {
        reader: Box::new(PipeReader {
            rx,
            buf: Vec::new(),
            pos: 0,
        }),
        writer: Box::new(PipeWriter { tx }),
    };
    (end(a_tx, a_rx), end(b_tx, b_rx))
}

impl Endpoint {
    pub fn from_tcp(stream: TcpStream) -> io::Result<Endpoint> {
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Endpoint {
            reader: Box::new(io::BufReader::new(stream)),
            writer: Box::new(writer),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipe_carries_bytes_both_ways() {
        let (mut a, mut b) = duplex_pipe();
        a.writer.write_all(b"hello").unwrap();
        b.writer.write_all(b"hi").unwrap();
        let mut buf = [0u8; 5];
        b.reader.read_exact(&mut buf).unwrap();
        assert_eq!(&buf, b"hello");
        let mut buf = [0u8; 2];
        a.reader.read_exact(&mut buf).unwrap();
        assert_eq!(&buf, b"hi");
    }

    #[test]
    fn dropped_writer_reads_as_eof() {
        let (a, mut b) = duplex_pipe();
        drop(a);
        let mut buf = [0u8; 1];
        assert_eq!(b.reader.read(&mut buf).unwrap(), 0);
        assert!(b.writer.write_all(b"x").is_err());
    }
}
