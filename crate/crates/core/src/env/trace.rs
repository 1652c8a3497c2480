use super::episode::EndReason;
use super::world::{Command, WorldState};
use crate::{Error, Result};
use std::io::{Read, Write};

/// A command leaving the edge server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssuedCommand {
    /// Capture slot of the frame it was computed from.
    pub origin: u64,
    /// Slot at which it becomes executable on the vehicle.
    pub ready: u64,
    /// Prediction horizon `l_p` the command was computed for.
    pub horizon: u64,
    pub command: Command,
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub position: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub progress: f64,
    pub cte: f64,
    pub captured: Option<u64>,
    /// Capture timestamps of frames that reached the edge this slot.
    pub arrivals: Vec<u64>,
    pub issued: Vec<IssuedCommand>,
    pub executed: Command,
    /// Capture slot behind the executed command; `None` while holding the
    /// initial zero command.
    pub executed_origin: Option<u64>,
    pub collisions: u32,
    pub offtrack: u32,
}

impl SlotRecord {
    /// Record for a zero-delay loop where the command is computed and
    /// executed in the capture slot.
    pub fn direct(world: &WorldState, progress: f64, cte: f64, slot: u64, command: Command) -> Self {
        SlotRecord {
            slot,
            position: world.position,
            heading: world.heading,
            speed: world.speed,
            progress,
            cte,
            captured: Some(slot),
            arrivals: vec![slot],
            issued: vec![IssuedCommand {
                origin: slot,
                ready: slot,
                horizon: 0,
                command,
            }],
            executed: command,
            executed_origin: Some(slot),
            collisions: 0,
            offtrack: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub route_id: u64,
    pub slots: Vec<SlotRecord>,
    pub completion: f64,
    pub collisions: u32,
    pub offtrack_events: u32,
    pub end: Option<EndReason>,
    pub mean_cte: f64,
}

/// Desk driving score in `[0, 100]`:
/// `100 · completion · 0.6^collisions · 0.7^offtrack`.
pub fn score(trace: &EpisodeTrace) -> f64 {
    100.0 * trace.completion.clamp(0.0, 1.0) * 0.6f64.powi(trace.collisions as i32) * 0.7f64.powi(trace.offtrack_events as i32)
}

const TRACE_MAGIC: &[u8; 4] = b"ETR2";

fn end_code(e: Option<EndReason>) -> u8 {
    match e {
        None => 0,
        Some(EndReason::Completed) => 1,
        Some(EndReason::Deviated) => 2,
        Some(EndReason::TimedOut) => 3,
    }
}

fn end_from(code: u8) -> Result<Option<EndReason>> {
    Ok(match code {
        0 => None,
        1 => Some(EndReason::Completed),
        2 => Some(EndReason::Deviated),
        3 => Some(EndReason::TimedOut),
        c => return Err(Error::Format(format!("unknown end code {c}"))),
    })
}

fn opt_slot(v: Option<u64>) -> i64 {
    v.map_or(-1, |s| s as i64)
}

impl EpisodeTrace {
    /// One CSV row per slot.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let fmt_opt = |v: Option<u64>| v.map_or(String::new(), |s| s.to_string());
        w.write_record([
            "slot",
            "x",
            "y",
            "heading",
            "speed",
            "progress",
            "cte",
            "captured",
            "arrivals",
            "issued",
            "executed_steer",
            "executed_accel",
            "executed_origin",
            "collisions",
            "offtrack",
        ])
        .map_err(csv_err)?;
        for r in &self.slots {
            let arrivals: Vec<String> = r.arrivals.iter().map(u64::to_string).collect();
            let issued: Vec<String> = r.issued.iter().map(|c| format!("{}@{}+{}", c.origin, c.ready, c.horizon)).collect();
            w.write_record([
                r.slot.to_string(),
                r.position[0].to_string(),
                r.position[1].to_string(),
                r.heading.to_string(),
                r.speed.to_string(),
                r.progress.to_string(),
                r.cte.to_string(),
                fmt_opt(r.captured),
                arrivals.join(";"),
                issued.join(";"),
                r.executed.steer.to_string(),
                r.executed.accel.to_string(),
                fmt_opt(r.executed_origin),
                r.collisions.to_string(),
                r.offtrack.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    /// Compact little-endian binary form.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(TRACE_MAGIC)?;
        w.write_all(&self.route_id.to_le_bytes())?;
        w.write_all(&self.completion.to_le_bytes())?;
        w.write_all(&self.collisions.to_le_bytes())?;
        w.write_all(&self.offtrack_events.to_le_bytes())?;
        w.write_all(&[end_code(self.end)])?;
        w.write_all(&self.mean_cte.to_le_bytes())?;
        w.write_all(&(self.slots.len() as u64).to_le_bytes())?;
        for r in &self.slots {
            w.write_all(&r.slot.to_le_bytes())?;
            for v in [r.position[0], r.position[1], r.heading, r.speed, r.progress, r.cte] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&opt_slot(r.captured).to_le_bytes())?;
            w.write_all(&(r.arrivals.len() as u32).to_le_bytes())?;
            for a in &r.arrivals {
                w.write_all(&a.to_le_bytes())?;
            }
            w.write_all(&(r.issued.len() as u32).to_le_bytes())?;
            for c in &r.issued {
                w.write_all(&c.origin.to_le_bytes())?;
                w.write_all(&c.ready.to_le_bytes())?;
                w.write_all(&c.horizon.to_le_bytes())?;
                w.write_all(&c.command.steer.to_le_bytes())?;
                w.write_all(&c.command.accel.to_le_bytes())?;
            }
            w.write_all(&r.executed.steer.to_le_bytes())?;
            w.write_all(&r.executed.accel.to_le_bytes())?;
            w.write_all(&opt_slot(r.executed_origin).to_le_bytes())?;
            w.write_all(&r.collisions.to_le_bytes())?;
            w.write_all(&r.offtrack.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != TRACE_MAGIC {
            return Err(Error::Format("not an episode trace".into()));
        }
        let route_id = read_u64(&mut r)?;
        let completion = read_f64(&mut r)?;
        let collisions = read_u32(&mut r)?;
        let offtrack_events = read_u32(&mut r)?;
        let mut code = [0u8; 1];
        read_exact(&mut r, &mut code)?;
        let end = end_from(code[0])?;
        let mean_cte = read_f64(&mut r)?;
        let n = read_u64(&mut r)?;
        let mut slots = Vec::new();
        for _ in 0..n {
            let slot = read_u64(&mut r)?;
            let mut f = [0.0; 6];
            for v in f.iter_mut() {
                *v = read_f64(&mut r)?;
            }
            let captured = read_opt(&mut r)?;
            let na = read_u32(&mut r)?;
            let arrivals = (0..na).map(|_| read_u64(&mut r)).collect::<Result<_>>()?;
            let ni = read_u32(&mut r)?;
            let mut issued = Vec::new();
            for _ in 0..ni {
                issued.push(IssuedCommand {
                    origin: read_u64(&mut r)?,
                    ready: read_u64(&mut r)?,
                    horizon: read_u64(&mut r)?,
                    command: Command {
                        steer: read_f64(&mut r)?,
                        accel: read_f64(&mut r)?,
                    },
                });
            }
            let executed = Command {
                steer: read_f64(&mut r)?,
                accel: read_f64(&mut r)?,
            };
            slots.push(SlotRecord {
                slot,
                position: [f[0], f[1]],
                heading: f[2],
                speed: f[3],
                progress: f[4],
                cte: f[5],
                captured,
                arrivals,
                issued,
                executed,
                executed_origin: read_opt(&mut r)?,
                collisions: read_u32(&mut r)?,
                offtrack: read_u32(&mut r)?,
            });
        }
        Ok(EpisodeTrace {
            route_id,
            slots,
            completion,
            collisions,
            offtrack_events,
            end,
            mean_cte,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Format(format!("truncated trace: {e}")))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_opt<R: Read>(r: &mut R) -> Result<Option<u64>> {
    let v = read_u64(r)? as i64;
    Ok((v >= 0).then_some(v as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(completion: f64, collisions: u32, offtrack: u32) -> EpisodeTrace {
        EpisodeTrace {
            route_id: 0,
            slots: vec![],
            completion,
            collisions,
            offtrack_events: offtrack,
            end: Some(EndReason::Completed),
            mean_cte: 0.0,
        }
    }

    #[test]
    fn score_formula() {
        assert_eq!(score(&trace(1.0, 0, 0)), 100.0);
        assert_eq!(score(&trace(0.0, 0, 0)), 0.0);
        assert!((score(&trace(1.0, 1, 0)) - 60.0).abs() < 1e-12);
        assert!((score(&trace(0.5, 0, 2)) - 24.5).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let w = WorldState {
            position: [1.5, -2.0],
            heading: 0.1,
            speed: 4.0,
            slot: 3,
        };
        let mut t = trace(0.7, 1, 2);
        t.slots.push(SlotRecord::direct(&w, 3.2, 0.1, 3, Command::new(0.2, -0.1)));
        let mut held = SlotRecord::direct(&w, 3.4, 0.2, 4, Command::default());
        held.captured = None;
        held.executed_origin = None;
        held.arrivals.clear();
        t.slots.push(held);
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(EpisodeTrace::read_binary(&buf[..]).unwrap(), t);
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }
}
