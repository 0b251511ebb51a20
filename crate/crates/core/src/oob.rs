//! Out-of-band destination exchange over a plain TCP socket.
//!
//! Each side sends one line `LLLL:QQQQQQ:PPPPPP:<32 hex GID>\n`. The client
//! writes first; the server answers after reading the client's line.

use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::fabric::psn::PSN_MASK;
use crate::verbs::{Gid, Lid};

pub const DEFAULT_OOB_PORT: u16 = 18515;

/// Length of an encoded line including the newline.
pub const LINE_LEN: usize = 4 + 1 + 6 + 1 + 6 + 1 + 32 + 1;

#[derive(Debug, Error)]
pub enum OobError {
    #[error("malformed destination line: {0}")]
    Parse(&'static str),
    #[error("peer closed the connection before sending its destination")]
    PeerClosed,
    #[error("{0}")]
    Io(#[from] io::Error),
}

/// What one side needs to know to connect to the other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Destination {
    pub lid: Lid,
    pub qpn: u32,
    pub psn: u32,
    pub gid: Gid,
}

impl Destination {
    pub fn encode(&self) -> String {
        debug_assert!(self.qpn <= PSN_MASK && self.psn <= PSN_MASK);
        let mut s = format!("{:04x}:{:06x}:{:06x}:", self.lid, self.qpn & PSN_MASK, self.psn & PSN_MASK);
        for b in self.gid.as_bytes() {
            s.push_str(&format!("{b:02x}"));
        }
        s.push('\n');
        s
    }

    /// Parses one line; the trailing newline is optional and hex digits may
    /// be of either case.
    pub fn decode(line: &str) -> Result<Self, OobError> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let fields: Vec<&str> = line.split(':').collect();
        let [lid, qpn, psn, gid] = fields[..] else {
            return Err(OobError::Parse("expected four colon-separated fields"));
        };
        let lid = hex_field(lid, 4, "lid")? as Lid;
        let qpn = hex_field(qpn, 6, "qpn")? as u32;
        let psn = hex_field(psn, 6, "psn")? as u32;
        if gid.len() != 32 || !gid.bytes().all(|c| c.is_ascii_hexdigit()) {
            return Err(OobError::Parse("gid must be 32 hex digits"));
        }
        let mut raw = [0u8; 16];
        for (i, b) in raw.iter_mut().enumerate() {
            *b = u8::from_str_radix(&gid[2 * i..2 * i + 2], 16).expect("checked hex");
        }
        Ok(Destination { lid, qpn, psn, gid: Gid(raw) })
    }
}

fn hex_field(s: &str, width: usize, what: &'static str) -> Result<u64, OobError> {
    if s.len() != width || !s.bytes().all(|c| c.is_ascii_hexdigit()) {
        return Err(OobError::Parse(what));
    }
    Ok(u64::from_str_radix(s, 16).expect("checked hex"))
}

impl FromStr for Destination {
    type Err = OobError;

    fn from_str(s: &str) -> Result<Self, OobError> {
        Destination::decode(s)
    }
}

impl fmt::Display for Destination {
    /// The human-readable form used in the pingpong address lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LID {:#06x}, QPN {:#08x}, PSN {:#08x}, GID {}", self.lid, self.qpn, self.psn, self.gid)
    }
}

fn read_line(reader: &mut impl BufRead) -> Result<String, OobError> {
    let mut line = String::with_capacity(LINE_LEN);
    // cap the read so a misbehaving peer cannot stream forever
    let n = reader.by_ref().take(LINE_LEN as u64 + 1).read_line(&mut line)?;
    if n == 0 {
        return Err(OobError::PeerClosed);
    }
    if !line.ends_with('\n') {
        return Err(OobError::Parse("line not newline-terminated"));
    }
    Ok(line)
}

const DONE_LINE: &str = "done\n";

/// An established out-of-band connection.
pub struct OobStream {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl OobStream {
    fn new(stream: TcpStream) -> Result<Self, OobError> {
        let _ = stream.set_nodelay(true);
        Ok(OobStream { reader: BufReader::new(stream.try_clone()?), writer: stream })
    }

    /// Connects to an exchange server.
    pub fn connect(host: &str, port: u16) -> Result<Self, OobError> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, format!("could not resolve {host}"));
        for addr in (host, port).to_socket_addrs()? {
            match TcpStream::connect(addr) {
                Ok(stream) => return OobStream::new(stream),
                Err(e) => last = e,
            }
        }
        Err(last.into())
    }

    pub fn send(&mut self, mine: &Destination) -> Result<(), OobError> {
        self.writer.write_all(mine.encode().as_bytes())?;
        Ok(self.writer.flush()?)
    }

    pub fn receive(&mut self) -> Result<Destination, OobError> {
        Destination::decode(&read_line(&mut self.reader)?)
    }

    /// Client half of the exchange: send first, then read the reply.
    pub fn exchange(&mut self, mine: &Destination) -> Result<Destination, OobError> {
        self.send(mine)?;
        self.receive()
    }

    /// Tells the peer this side is finished and waits for it to say the same.
    pub fn barrier(&mut self, timeout: Option<Duration>) -> Result<(), OobError> {
        self.writer.write_all(DONE_LINE.as_bytes())?;
        self.writer.flush()?;
        self.reader.get_ref().set_read_timeout(timeout)?;
        match read_line(&mut self.reader)?.as_str() {
            DONE_LINE => Ok(()),
            _ => Err(OobError::Parse("expected done marker")),
        }
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.writer.set_read_timeout(timeout)
    }
}

/// A bound listener waiting for one client.
pub struct OobListener {
    listener: TcpListener,
}

impl OobListener {
    pub fn bind(port: u16) -> Result<Self, OobError> {
        Self::bind_addr(("0.0.0.0", port))
    }

    pub fn bind_addr(addr: impl ToSocketAddrs) -> Result<Self, OobError> {
        Ok(OobListener { listener: TcpListener::bind(addr)? })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts one client and reads its destination. The caller replies on
    /// the returned stream once it is ready.
    pub fn accept(&self) -> Result<(OobStream, Destination), OobError> {
        let (stream, _) = self.listener.accept()?;
        let mut s = OobStream::new(stream)?;
        let peer = s.receive()?;
        Ok((s, peer))
    }
}

/// Connects to `host:port`, sends `mine`, and returns the server's reply.
pub fn exchange_as_client(host: &str, port: u16, mine: &Destination) -> Result<Destination, OobError> {
    OobStream::connect(host, port)?.exchange(mine)
}

/// Accepts one client on `port`, reads its destination and replies with `mine`.
pub fn exchange_as_server(port: u16, mine: &Destination) -> Result<Destination, OobError> {
    let (mut s, peer) = OobListener::bind(port)?.accept()?;
    s.send(mine)?;
    Ok(peer)
}
