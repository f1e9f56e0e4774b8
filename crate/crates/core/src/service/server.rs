//! Length-prefixed framing over TCP: each message is a big-endian `u32`
//! byte count followed by that many bytes of UTF-8 JSON.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use super::{ErrorCode, Reply, Session};

pub const MAX_FRAME_LEN: u32 = 16 << 20;

/// Reads one frame; `None` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&l| l <= MAX_FRAME_LEN)
        .ok_or_else(|| io::Error::new(ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Runs one session over `stream` until the peer disconnects.
pub fn serve_connection(stream: TcpStream, session: Session, greeting: Option<Reply>) -> io::Result<()> {
    let mut session = session;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    if let Some(g) = greeting {
        write_frame(&mut writer, g.to_json().as_bytes())?;
    }
    while let Some(frame) = read_frame(&mut reader)? {
        let replies = match std::str::from_utf8(&frame) {
            Ok(text) => session.handle_text(text),
            Err(_) => vec![Reply::error(ErrorCode::BadRequest, "message is not UTF-8")],
        };
        for r in replies {
            write_frame(&mut writer, r.to_json().as_bytes())?;
        }
    }
    Ok(())
}

/// Accepts connections forever, one thread and one fresh session each.
///
/// `make_session` returns the session and an optional greeting to send
/// first (the initial state of a preloaded model).
pub fn serve(
    listener: TcpListener,
    make_session: Arc<dyn Fn() -> (Session, Option<Reply>) + Send + Sync>,
) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        let make = Arc::clone(&make_session);
        thread::spawn(move || {
            log::info!("session opened for {peer}");
            let (session, greeting) = make();
            if let Err(e) = serve_connection(stream, session, greeting) {
                log::warn!("session for {peer} ended: {e}");
            } else {
                log::info!("session closed for {peer}");
            }
        });
    }
    Ok(())
}
