//! Out-of-band destination exchange over real TCP sockets.

use std::io::{BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use softverbs::oob::{exchange_as_client, Destination, OobError, OobListener, OobStream, LINE_LEN};
use softverbs::verbs::Gid;

fn dest(lid: u16, qpn: u32, psn: u32) -> Destination {
    Destination { lid, qpn, psn, gid: Gid::ZERO }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn client_and_server_learn_each_other() {
    let listener = OobListener::bind_addr("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let server_side = dest(2, 0x580049, 0x123456);
    let server = thread::spawn(move || {
        let (mut s, peer) = listener.accept().unwrap();
        s.send(&server_side).unwrap();
        s.barrier(Some(Duration::from_secs(5))).unwrap();
        peer
    });
    let client_side = dest(1, 0x580048, 0x2a166f);
    let mut s = OobStream::connect("127.0.0.1", port).unwrap();
    assert_eq!(s.exchange(&client_side).unwrap(), server_side);
    s.barrier(Some(Duration::from_secs(5))).unwrap();
    assert_eq!(server.join().unwrap(), client_side);
}

#[test]
fn free_function_client() {
    let listener = OobListener::bind_addr("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = thread::spawn(move || {
        let (mut s, peer) = listener.accept().unwrap();
        s.send(&dest(9, 9, 9)).unwrap();
        peer
    });
    assert_eq!(exchange_as_client("127.0.0.1", port, &dest(3, 4, 5)).unwrap(), dest(9, 9, 9));
    assert_eq!(server.join().unwrap(), dest(3, 4, 5));
}

#[test]
fn client_writes_first_and_line_is_fixed_width() {
    let raw = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = raw.local_addr().unwrap().port();
    let fake_server = thread::spawn(move || {
        let (stream, _) = raw.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let mut w = stream;
        w.write_all(dest(2, 1, 1).encode().as_bytes()).unwrap();
        line
    });
    exchange_as_client("127.0.0.1", port, &dest(1, 0x580048, 0x2a166f)).unwrap();
    let line = fake_server.join().unwrap();
    assert_eq!(line, "0001:580048:2a166f:00000000000000000000000000000000\n");
    assert_eq!(line.len(), LINE_LEN);
}

#[test]
fn server_waits_for_client_line() {
    let listener = OobListener::bind_addr("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = thread::spawn(move || {
        let (mut s, peer) = listener.accept().unwrap();
        s.send(&dest(2, 2, 2)).unwrap();
        peer
    });
    let mut raw = TcpStream::connect(("127.0.0.1", port)).unwrap();
    raw.set_read_timeout(Some(Duration::from_millis(100))).unwrap();
    let mut byte = [0u8; 1];
    let early = raw.read(&mut byte).unwrap_err();
    assert!(matches!(early.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut), "server spoke first");
    raw.write_all(dest(1, 1, 1).encode().as_bytes()).unwrap();
    raw.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut reply = String::new();
    BufReader::new(raw).read_line(&mut reply).unwrap();
    assert_eq!(Destination::decode(&reply).unwrap(), dest(2, 2, 2));
    assert_eq!(server.join().unwrap(), dest(1, 1, 1));
}

#[test]
fn no_server_is_an_io_error() {
    let port = free_port();
    let err = exchange_as_client("127.0.0.1", port, &dest(1, 1, 1)).unwrap_err();
    assert!(matches!(err, OobError::Io(ref e) if e.kind() == ErrorKind::ConnectionRefused), "{err:?}");
}

#[test]
fn garbage_reply_is_rejected() {
    let raw = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = raw.local_addr().unwrap().port();
    thread::spawn(move || {
        let (mut s, _) = raw.accept().unwrap();
        let mut buf = [0u8; LINE_LEN];
        s.read_exact(&mut buf).unwrap();
        s.write_all(b"this is not a destination line at all, not even close\n").unwrap();
    });
    assert!(matches!(exchange_as_client("127.0.0.1", port, &dest(1, 1, 1)), Err(OobError::Parse(_))));
}

#[test]
fn peer_closing_early_is_reported() {
    let raw = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = raw.local_addr().unwrap().port();
    thread::spawn(move || {
        let (s, _) = raw.accept().unwrap();
        drop(s);
    });
    let err = exchange_as_client("127.0.0.1", port, &dest(1, 1, 1)).unwrap_err();
    assert!(matches!(err, OobError::PeerClosed | OobError::Io(_)), "{err:?}");
}

#[test]
fn barrier_times_out_when_peer_is_silent() {
    let listener = OobListener::bind_addr("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        s.send(&dest(2, 2, 2)).unwrap();
        thread::sleep(Duration::from_millis(400));
    });
    let mut s = OobStream::connect("127.0.0.1", port).unwrap();
    s.exchange(&dest(1, 1, 1)).unwrap();
    assert!(s.barrier(Some(Duration::from_millis(50))).is_err());
    server.join().unwrap();
}
