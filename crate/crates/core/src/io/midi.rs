//! Standard MIDI File reading (formats 0 and 1) and writing (format 0).
//!
//! Times are converted to 10 ms frames with exact integer arithmetic so the
//! export/import round trip is an identity on frame-aligned rolls. Parse
//! errors carry the byte offset of the offending data.

use crate::error::{Error, Result};
use crate::music::PianoRoll;

/// Ticks per quarter note used for export.
pub const EXPORT_TPQ: u16 = 480;
/// Microseconds per quarter note used for export (120 bpm).
pub const EXPORT_TEMPO: u32 = 500_000;
const DEFAULT_TEMPO: u64 = 500_000;
const FRAME_US: u128 = 10_000;

fn perr<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset,
        message: message.into(),
    })
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8> {
        match self.data.get(self.pos) {
            Some(&b) => {
                self.pos += 1;
                Ok(b)
            }
            None => perr(self.pos, "unexpected end of data"),
        }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return perr(
                self.pos,
                format!("need {n} bytes, {} remain", self.data.len() - self.pos),
            );
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.bytes(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut v = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        perr(start, "variable-length quantity longer than 4 bytes")
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    NoteOn { pitch: u8, velocity: u8 },
    NoteOff { pitch: u8 },
    Pedal { down: bool },
    Tempo(u32),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    tick: u64,
    /// Track and position, for a stable order among simultaneous events.
    track: usize,
    seq: usize,
    kind: Kind,
}

/// Time base from the header's division field.
#[derive(Debug, Clone, Copy)]
enum Division {
    Metrical(u16),
    /// Ticks per second as the rational `num / den`.
    Timecode {
        num: u128,
        den: u128,
    },
}

fn parse_track(r: &mut Reader, end: usize, track: usize, events: &mut Vec<Event>) -> Result<()> {
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut seq = 0;
    while r.pos < end {
        tick += r.vlq()? as u64;
        let status_pos = r.pos;
        let mut status = r.u8()?;
        let first_data;
        if status < 0x80 {
            match running {
                Some(s) => {
                    first_data = Some(status);
                    status = s;
                }
                None => return perr(status_pos, "data byte without running status"),
            }
        } else {
            first_data = None;
        }
        let push = |events: &mut Vec<Event>, seq: &mut usize, kind| {
            events.push(Event {
                tick,
                track,
                seq: *seq,
                kind,
            });
            *seq += 1;
        };
        match status {
            0xFF => {
                running = None;
                let ty = r.u8()?;
                let len = r.vlq()? as usize;
                let data_pos = r.pos;
                let data = r.bytes(len)?;
                match ty {
                    0x2F => {
                        r.pos = end;
                        break;
                    }
                    0x51 => {
                        if len != 3 {
                            return perr(data_pos, "tempo event must have 3 bytes");
                        }
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if us == 0 {
                            return perr(data_pos, "zero tempo");
                        }
                        push(events, &mut seq, Kind::Tempo(us));
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.bytes(len)?;
            }
            0xF1..=0xFE => return perr(status_pos, format!("unexpected system message 0x{status:02X} in track")),
            _ => {
                running = Some(status);
                let ndata = if matches!(status & 0xF0, 0xC0 | 0xD0) { 1 } else { 2 };
                let mut data = [0u8; 2];
                for (k, slot) in data.iter_mut().take(ndata).enumerate() {
                    let pos = r.pos;
                    let b = match (k, first_data) {
                        (0, Some(b)) => b,
                        _ => r.u8()?,
                    };
                    if b >= 0x80 {
                        return perr(pos, format!("data byte 0x{b:02X} has the high bit set"));
                    }
                    *slot = b;
                }
                match status & 0xF0 {
                    0x90 if data[1] > 0 => push(
                        events,
                        &mut seq,
                        Kind::NoteOn {
                            pitch: data[0],
                            velocity: data[1],
                        },
                    ),
                    0x90 | 0x80 => push(events, &mut seq, Kind::NoteOff { pitch: data[0] }),
                    0xB0 if data[0] == 64 => push(events, &mut seq, Kind::Pedal { down: data[1] >= 64 }),
                    _ => {}
                }
            }
        }
        if r.pos > end {
            return perr(end, "event runs past the end of its track chunk");
        }
    }
    Ok(())
}

fn parse(bytes: &[u8]) -> Result<(Division, Vec<Event>)> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.bytes(4).map_err(|_| Error::Parse {
        offset: 0,
        message: "file too short for a header".into(),
    })? != b"MThd"
    {
        return perr(0, "missing MThd header");
    }
    let hlen = r.u32()? as usize;
    if hlen < 6 {
        return perr(4, format!("header length {hlen} is shorter than 6"));
    }
    let hstart = r.pos;
    let format = r.u16()?;
    let ntracks = r.u16()? as usize;
    let div_pos = r.pos;
    let div = r.u16()?;
    r.pos = hstart;
    r.bytes(hlen)?;
    if format > 1 {
        return perr(hstart, format!("unsupported MIDI format {format}"));
    }
    if format == 0 && ntracks != 1 {
        return perr(hstart + 2, format!("format 0 file declares {ntracks} tracks"));
    }
    let division = if div & 0x8000 == 0 {
        if div == 0 {
            return perr(div_pos, "zero ticks per quarter note");
        }
        Division::Metrical(div)
    } else {
        let fps = -((div >> 8) as u8 as i8) as i32;
        let sub = (div & 0xFF) as u128;
        let (num, den) = match fps {
            24 | 25 | 30 => (fps as u128 * sub, 1),
            29 => (30_000 * sub, 1001),
            _ => return perr(div_pos, format!("invalid SMPTE frame rate {fps}")),
        };
        if sub == 0 {
            return perr(div_pos, "zero ticks per SMPTE frame");
        }
        Division::Timecode { num, den }
    };
    let mut events = Vec::new();
    let mut track = 0;
    while track < ntracks {
        let chunk_pos = r.pos;
        let id = r.bytes(4)?;
        let len = r.u32()? as usize;
        let start = r.pos;
        if bytes.len() - start < len {
            return perr(chunk_pos, format!("chunk length {len} runs past end of file"));
        }
        let end = start + len;
        if id == b"MTrk" {
            parse_track(&mut r, end, track, &mut events)?;
            track += 1;
        }
        r.pos = end;
    }
    Ok((division, events))
}

/// Converts ticks to frames using `tempo` segments; all arithmetic exact.
struct Clock {
    division: Division,
    /// (tick, tempo, microseconds * tpq at tick)
    segments: Vec<(u64, u64, u128)>,
}

impl Clock {
    fn new(division: Division, events: &[Event]) -> Self {
        let mut segments = vec![(0u64, DEFAULT_TEMPO, 0u128)];
        if let Division::Metrical(_) = division {
            for e in events {
                if let Kind::Tempo(us) = e.kind {
                    let &(t0, tempo, acc) = segments.last().unwrap();
                    let acc = acc + (e.tick - t0) as u128 * tempo as u128;
                    if e.tick == t0 {
                        segments.pop();
                    }
                    segments.push((e.tick, us as u64, acc));
                }
            }
        }
        Self { division, segments }
    }

    /// Frame index, rounding half up.
    fn frame(&self, tick: u64) -> u64 {
        match self.division {
            Division::Metrical(tpq) => {
                let i = self.segments.partition_point(|s| s.0 <= tick) - 1;
                let (t0, tempo, acc) = self.segments[i];
                let scaled = acc + (tick - t0) as u128 * tempo as u128;
                let tpq = tpq as u128;
                ((scaled + FRAME_US / 2 * tpq) / (FRAME_US * tpq)) as u64
            }
            Division::Timecode { num, den } => {
                // us = tick * 1e6 * den / num
                let scaled = tick as u128 * 1_000_000 * den;
                ((scaled + FRAME_US / 2 * num) / (FRAME_US * num)) as u64
            }
        }
    }
}

/// Parses a MIDI file into a roll of exactly `max_frames` frames.
///
/// Every channel is read as piano. Notes shorter than a frame still occupy
/// one; a note-on at a pitch that is already sounding starts a new onset and
/// the run continues until the last overlapping note ends.
pub fn midi_to_roll(bytes: &[u8], max_frames: usize) -> Result<PianoRoll> {
    let (division, mut events) = parse(bytes)?;
    events.sort_by_key(|e| (e.tick, e.track, e.seq));
    let clock = Clock::new(division, &events);
    let mut roll = PianoRoll::empty(max_frames);

    // Active notes per pitch: (start frame, velocity); pedal start frame.
    let mut active: Vec<Vec<(u64, u8)>> = vec![Vec::new(); 128];
    let mut notes: Vec<(u8, u64, u64, u8)> = Vec::new();
    let mut pedal_start: Option<u64> = None;
    let mut pedal_runs = Vec::new();
    for e in &events {
        let f = clock.frame(e.tick);
        match e.kind {
            Kind::NoteOn { pitch, velocity } => active[pitch as usize].push((f, velocity)),
            Kind::NoteOff { pitch } => {
                let stack = &mut active[pitch as usize];
                if !stack.is_empty() {
                    let (start, v) = stack.remove(0);
                    notes.push((pitch, start, f.max(start + 1), v));
                }
            }
            Kind::Pedal { down: true } => {
                pedal_start.get_or_insert(f);
            }
            Kind::Pedal { down: false } => {
                if let Some(s) = pedal_start.take() {
                    pedal_runs.push((s, f));
                }
            }
            Kind::Tempo(_) => {}
        }
    }
    // Unterminated notes and pedal run to the end of the roll.
    let horizon = max_frames as u64;
    for (p, stack) in active.iter().enumerate() {
        for &(start, v) in stack {
            notes.push((p as u8, start, horizon.max(start + 1), v));
        }
    }
    if let Some(s) = pedal_start {
        pedal_runs.push((s, horizon));
    }
    if notes.is_empty() {
        log::warn!("MIDI file has no note events; returning an empty roll");
    }
    // Paint in start order so later notes own the cells they overlap.
    notes.sort_by_key(|n| (n.1, n.0));
    for (pitch, start, end, v) in notes {
        let (s, e) = (start.min(horizon) as usize, end.min(horizon) as usize);
        for f in s..e {
            roll.set_velocity(pitch as usize, f, v);
        }
        if s < e {
            roll.set_onset(pitch as usize, s, true);
        }
    }
    for (s, e) in pedal_runs {
        for f in s.min(horizon) as usize..e.min(horizon) as usize {
            roll.set_pedal_frame(f, true);
        }
    }
    Ok(roll)
}

fn write_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (v & 0x7F) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(buf[i] | if i > 0 { 0x80 } else { 0 });
    }
}

/// Export tick of a frame boundary: `round(9.6 f)`.
fn frame_tick(f: usize) -> u64 {
    (96 * f as u64 + 5) / 10
}

/// Writes a format-0 file at 120 bpm and 480 ticks per quarter.
///
/// Each note of [`PianoRoll::notes`] becomes a note-on/off pair on channel 0
/// and each pedal run (frames where any pitch row has pedal set) a CC64
/// 127/0 pair. At equal ticks, note-offs precede pedal changes, which
/// precede note-ons.
pub fn roll_to_midi(roll: &PianoRoll) -> Vec<u8> {
    // (tick, order, bytes)
    let mut events: Vec<(u64, u8, [u8; 3])> = Vec::new();
    for n in roll.notes() {
        events.push((frame_tick(n.start), 2, [0x90, n.pitch, n.velocity]));
        events.push((frame_tick(n.end), 0, [0x80, n.pitch, 0]));
    }
    let mut f = 0;
    while f < roll.frames() {
        if roll.pedal_frame(f) {
            let s = f;
            while f < roll.frames() && roll.pedal_frame(f) {
                f += 1;
            }
            events.push((frame_tick(s), 1, [0xB0, 64, 127]));
            events.push((frame_tick(f), 1, [0xB0, 64, 0]));
        } else {
            f += 1;
        }
    }
    events.sort_by_key(|e| (e.0, e.1, e.2[1]));

    let mut track = Vec::new();
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xFF, 0x51, 0x03]);
    track.extend_from_slice(&EXPORT_TEMPO.to_be_bytes()[1..]);
    let mut last = 0;
    for (tick, _, msg) in events {
        write_vlq(&mut track, (tick - last) as u32);
        track.extend_from_slice(&msg);
        last = tick;
    }
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&EXPORT_TPQ.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}
