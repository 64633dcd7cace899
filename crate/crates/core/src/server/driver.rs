//! Control-connection handler: one thread per client connection, strictly
//! request/response.

use std::io::{BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::sync::Arc;

use super::state::ServerCore;
use crate::error::{Error, Result};
use crate::protocol::{
    self, decode_values, encode_error_payload, encode_values, Command, Frame, Opcode, Value,
};

pub(crate) fn serve_control(core: Arc<ServerCore>, stream: TcpStream) -> Result<()> {
    stream.set_nodelay(true)?;
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_default();
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut session: Option<u32> = None;
    let outcome = loop {
        let frame = match protocol::read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break Ok(()),
            Err(e) => {
                // Framing is lost; report once and hang up.
                let _ = protocol::write_frame(
                    &mut writer,
                    Command::Error,
                    session.unwrap_or(0),
                    &encode_error_payload(&e),
                );
                let _ = writer.flush();
                break Err(e);
            }
        };
        let Command::Request(op) = frame.command else {
            let e = Error::Protocol(format!(
                "expected a request, got command 0x{:02x}",
                frame.command.code()
            ));
            protocol::write_frame(
                &mut writer,
                Command::Error,
                frame.session_id,
                &encode_error_payload(&e),
            )?;
            writer.flush()?;
            continue;
        };
        let (sid, reply) = dispatch(&core, &mut session, op, &frame);
        match reply {
            Ok(values) => protocol::write_frame(
                &mut writer,
                Command::Response(op),
                sid,
                &encode_values(&values),
            )?,
            Err(e) => {
                log::debug!("{peer} session {sid}: {:?} failed: {e}", op);
                protocol::write_frame(&mut writer, Command::Error, sid, &encode_error_payload(&e))?
            }
        };
        writer.flush()?;
    };
    if let Some(sid) = session {
        core.close_session(sid);
    }
    outcome
}

fn dispatch(
    core: &ServerCore,
    session: &mut Option<u32>,
    op: Opcode,
    frame: &Frame,
) -> (u32, Result<Vec<Value>>) {
    if op == Opcode::Handshake {
        if let Some(sid) = *session {
            return (
                sid,
                Err(Error::ProtocolState(format!(
                    "connection already bound to session {sid}"
                ))),
            );
        }
        return match handshake(core, &frame.payload) {
            Ok((sid, values)) => {
                *session = Some(sid);
                (sid, Ok(values))
            }
            Err(e) => (0, Err(e)),
        };
    }
    let Some(sid) = *session else {
        return (
            frame.session_id,
            Err(Error::ProtocolState(
                "handshake required before any other request".into(),
            )),
        );
    };
    if op == Opcode::Close {
        core.close_session(sid);
        return (sid, Ok(Vec::new()));
    }
    if frame.session_id != sid {
        return (
            sid,
            Err(Error::ProtocolState(format!(
                "frame names session {}, connection holds {sid}",
                frame.session_id
            ))),
        );
    }
    let args = match decode_values(&frame.payload) {
        Ok(a) => a,
        Err(e) => return (sid, Err(e.into())),
    };
    (sid, handle(core, sid, op, &args))
}

fn handshake(core: &ServerCore, payload: &[u8]) -> Result<(u32, Vec<Value>)> {
    let args = decode_values(payload)?;
    let version = args.first().and_then(Value::as_i64);
    let client = args.get(1).and_then(Value::as_str).unwrap_or("");
    match version {
        Some(v) if v == protocol::PROTOCOL_VERSION as i64 => {}
        Some(v) => {
            return Err(Error::Version(format!(
                "client speaks version {v}, server speaks {}",
                protocol::PROTOCOL_VERSION
            )))
        }
        None => {
            return Err(Error::Argument(
                "handshake needs [int version, string client]".into(),
            ))
        }
    }
    let sid = core.open_session(client.to_owned());
    let pool = core.pool_status();
    Ok((
        sid,
        vec![
            Value::Str(core.name.clone()),
            Value::I32(pool.size as i32),
            Value::I32(pool.free as i32),
        ],
    ))
}

fn handle(core: &ServerCore, sid: u32, op: Opcode, args: &[Value]) -> Result<Vec<Value>> {
    let bad = |what: &str| Error::Argument(format!("{op:?} expects {what}"));
    match op {
        Opcode::RequestWorkers => {
            let n = args
                .first()
                .and_then(Value::as_i64)
                .filter(|_| args.len() == 1)
                .ok_or_else(|| bad("[int n]"))?;
            let endpoints = core.request_workers(sid, n)?;
            let mut out = vec![Value::I32(endpoints.len() as i32)];
            out.extend(endpoints.into_iter().map(Value::Str));
            Ok(out)
        }
        Opcode::RegisterLibrary => match args {
            [Value::Str(name), Value::Str(locator)] => core
                .register_library(sid, name, locator)
                .map(|_| Vec::new()),
            [Value::Str(name)] => core.register_library(sid, name, "").map(|_| Vec::new()),
            _ => Err(bad("[string name, string locator]")),
        },
        Opcode::CreateMatrix => match args {
            [Value::Matrix(h)] => core.seal(sid, h).map(|_| Vec::new()),
            [m, n] => {
                let (m, n) = m
                    .as_i64()
                    .zip(n.as_i64())
                    .ok_or_else(|| bad("[int rows, int cols] or [matrix]"))?;
                let (h, layout) = core.create_matrix(sid, m, n)?;
                let mut out = vec![Value::Matrix(h)];
                out.extend(layout.boundaries().iter().map(|&b| Value::I64(b as i64)));
                Ok(out)
            }
            _ => Err(bad("[int rows, int cols] or [matrix]")),
        },
        Opcode::Run => match args {
            [Value::Str(lib), Value::Str(routine), rest @ ..] => core.run(sid, lib, routine, rest),
            _ => Err(bad("[string library, string routine, args...]")),
        },
        Opcode::SendRows | Opcode::FetchRows => Err(Error::Protocol(format!(
            "{op:?} goes to worker data endpoints, not the driver"
        ))),
        Opcode::Collective => Err(Error::Protocol(
            "collective frames are worker-internal".into(),
        )),
        Opcode::Handshake | Opcode::Close => unreachable!("handled by dispatch"),
    }
}
