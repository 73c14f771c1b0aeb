//! Gameplay session logs: parsing, continuous-state expansion, x-position
//! reconstruction, and stacking into the 37-column per-timestep matrix.
//!
//! Session file format (UTF-8, `\n` line endings):
//!
//! ```text
//! #player <id>
//! #level <index 0-15>
//! #demo <d1> <d2> <d3> <d4>
//! #length <ticks>
//! <tick>\t<EventName>\t<begin|end|fire>
//! ```
//!
//! `#player` and `#level` are required. `#demo` defaults to `0 0 0 0` and
//! `#length` to one past the last recorded tick. Records must be in
//! non-decreasing tick order. The canonical form writes all four headers in
//! the order above, then one record per line in tick order.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const EVENT_COUNT: usize = 31;
pub const COLUMNS: usize = 37;
pub const DEMOGRAPHIC_COLUMNS: std::ops::Range<usize> = 31..35;
pub const LEVEL_COLUMN: usize = 35;
pub const X_COLUMN: usize = 36;
/// Per-session crop length.
pub const SESSION_TICKS: usize = 904;
pub const MAX_LEVEL_INDEX: usize = 15;

pub const RIGHT_MOVE: usize = 4;
pub const LEFT_MOVE: usize = 5;
pub const RUNNING: usize = 6;
pub const LITTLE: usize = 8;
pub const LARGE: usize = 9;
pub const FIRE: usize = 10;

const INFINITE_MARIO_EVENTS: [&str; EVENT_COUNT] = [
    "StartLevel",
    "WonLevel",
    "LostLevel",
    "Jumping",
    "RightMove",
    "LeftMove",
    "Running",
    "Ducking",
    "Little",
    "Large",
    "Fire",
    "DieByGoomba",
    "DeathByShell",
    "DeathByBulletBill",
    "DieByGreenKoopa",
    "DeathByGap",
    "UnleashShell",
    "BlockCoinDestroy",
    "BlockPowerDestroy",
    "FireKillGoomba",
    "StompKillGoomba",
    "StompKillGreenKoopa",
    "ShellKillGoomba",
    "ShellKillGreenKoopa",
    "FireKillGreenKoopa",
    "CollectCoin",
    "BlockPowerDestroyBulletBill",
    "StompKillBulletBill",
    "ShellKillBulletBill",
    "BlockCoinDestroyBulletBill",
    "CollectCoinBulletBill",
];

/// Ordered event names; position is the matrix column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSchema {
    names: Vec<String>,
    continuous: std::ops::RangeInclusive<usize>,
}

impl EventSchema {
    pub fn new(names: Vec<String>, continuous: std::ops::RangeInclusive<usize>) -> Result<Self> {
        if names.len() != EVENT_COUNT {
            return Err(Error::Config(format!(
                "event schema needs {EVENT_COUNT} names, got {}",
                names.len()
            )));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Config("event names must be unique".into()));
        }
        if continuous.is_empty() || *continuous.end() >= EVENT_COUNT {
            return Err(Error::Config(format!(
                "continuous range {continuous:?} outside 0..={}",
                EVENT_COUNT - 1
            )));
        }
        Ok(EventSchema { names, continuous })
    }

    /// The Infinite Mario event list; RightMove through Fire are continuous.
    pub fn infinite_mario() -> Self {
        EventSchema::new(
            INFINITE_MARIO_EVENTS.iter().map(|s| s.to_string()).collect(),
            RIGHT_MOVE..=FIRE,
        )
        .expect("built-in schema is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_continuous(&self, index: usize) -> bool {
        self.continuous.contains(&index)
    }

    fn is_size_state(&self, index: usize) -> bool {
        matches!(index, LITTLE | LARGE | FIRE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerKind {
    Begin,
    End,
    Fire,
}

impl MarkerKind {
    fn as_str(self) -> &'static str {
        match self {
            MarkerKind::Begin => "begin",
            MarkerKind::End => "end",
            MarkerKind::Fire => "fire",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventMarker {
    pub event: usize,
    pub kind: MarkerKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickEvents {
    pub tick: usize,
    pub markers: Vec<EventMarker>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSession {
    pub player_id: String,
    pub level_index: usize,
    pub demographics: [u8; 4],
    /// Number of timesteps in the session.
    pub length: usize,
    /// Strictly increasing by tick.
    pub ticks: Vec<TickEvents>,
}

impl RawSession {
    pub fn marker_count(&self) -> usize {
        self.ticks.iter().map(|t| t.markers.len()).sum()
    }

    pub fn label(&self) -> String {
        format!("{}/level{}", self.player_id, self.level_index)
    }

    /// Canonical text form; `parse_session` of canonical text round-trips.
    pub fn to_canonical(&self, schema: &EventSchema) -> String {
        let mut out = String::new();
        let d = self.demographics;
        let _ = writeln!(out, "#player {}", self.player_id);
        let _ = writeln!(out, "#level {}", self.level_index);
        let _ = writeln!(out, "#demo {} {} {} {}", d[0], d[1], d[2], d[3]);
        let _ = writeln!(out, "#length {}", self.length);
        for t in &self.ticks {
            for m in &t.markers {
                let _ = writeln!(out, "{}\t{}\t{}", t.tick, schema.name(m.event), m.kind.as_str());
            }
        }
        out
    }
}

pub fn parse_session(text: &str, schema: &EventSchema) -> Result<RawSession> {
    let mut player = None;
    let mut level = None;
    let mut demographics = [0u8; 4];
    let mut length = None;
    let mut ticks: Vec<TickEvents> = Vec::new();
    let mut unknown = BTreeSet::new();

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let mut parts = header.split_whitespace();
            let key = parts.next().unwrap_or("");
            let rest: Vec<&str> = parts.collect();
            match key {
                "player" => {
                    if rest.len() != 1 {
                        return Err(Error::parse(lineno, "#player takes exactly one id"));
                    }
                    player = Some(rest[0].to_string());
                }
                "level" => {
                    let v = parse_single::<usize>(&rest, lineno, "#level")?;
                    if v > MAX_LEVEL_INDEX {
                        return Err(Error::parse(
                            lineno,
                            format!("level index {v} outside 0..={MAX_LEVEL_INDEX}"),
                        ));
                    }
                    level = Some(v);
                }
                "demo" => {
                    if rest.len() != 4 {
                        return Err(Error::parse(lineno, "#demo takes four values"));
                    }
                    for (slot, tok) in demographics.iter_mut().zip(&rest) {
                        let v: u8 = tok
                            .parse()
                            .map_err(|_| Error::parse(lineno, format!("bad demographic {tok:?}")))?;
                        if v > 4 {
                            return Err(Error::parse(lineno, format!("demographic {v} outside 0..=4")));
                        }
                        *slot = v;
                    }
                }
                "length" => length = Some(parse_single::<usize>(&rest, lineno, "#length")?),
                other => return Err(Error::parse(lineno, format!("unknown header #{other}"))),
            }
            continue;
        }

        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                lineno,
                format!("expected tick<TAB>event<TAB>kind, got {line:?}"),
            ));
        }
        let tick: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad tick {:?}", fields[0])))?;
        let kind = match fields[2] {
            "begin" => MarkerKind::Begin,
            "end" => MarkerKind::End,
            "fire" => MarkerKind::Fire,
            other => return Err(Error::parse(lineno, format!("bad marker kind {other:?}"))),
        };
        let Some(event) = schema.index_of(fields[1]) else {
            unknown.insert(fields[1].to_string());
            continue;
        };
        if schema.is_continuous(event) == (kind == MarkerKind::Fire) {
            return Err(Error::parse(
                lineno,
                format!(
                    "{} is {} and cannot be marked {:?}",
                    fields[1],
                    if schema.is_continuous(event) { "continuous" } else { "instantaneous" },
                    kind.as_str()
                ),
            ));
        }
        match ticks.last_mut() {
            Some(last) if last.tick == tick => last.markers.push(EventMarker { event, kind }),
            Some(last) if last.tick > tick => {
                return Err(Error::parse(
                    lineno,
                    format!("tick {tick} after tick {}", last.tick),
                ))
            }
            _ => ticks.push(TickEvents {
                tick,
                markers: vec![EventMarker { event, kind }],
            }),
        }
    }

    if !unknown.is_empty() {
        return Err(Error::UnknownEvents(unknown.into_iter().collect()));
    }
    let player_id = player.ok_or_else(|| Error::parse(0, "missing #player header"))?;
    let level_index = level.ok_or_else(|| Error::parse(0, "missing #level header"))?;
    let last = ticks.last().map_or(0, |t| t.tick + 1);
    let length = length.unwrap_or(last);
    if length < last {
        return Err(Error::parse(
            0,
            format!("#length {length} but events recorded at tick {}", last - 1),
        ));
    }
    Ok(RawSession {
        player_id,
        level_index,
        demographics,
        length,
        ticks,
    })
}

fn parse_single<T: std::str::FromStr>(rest: &[&str], lineno: usize, what: &str) -> Result<T> {
    match rest {
        [v] => v
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad {what} value {v:?}"))),
        _ => Err(Error::parse(lineno, format!("{what} takes exactly one value"))),
    }
}

/// Per-tick 0/1 state of all events, `length × 31`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStates {
    pub rows: Vec<[u8; EVENT_COUNT]>,
}

impl EventStates {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, tick: usize, event: usize) -> bool {
        self.rows[tick][event] == 1
    }
}

/// Expands begin/end markers into per-tick state.
///
/// Within a tick, ends apply before begins. A continuous event is active on
/// `[begin, end)`; an unmatched begin runs to the end of the session. The
/// size states Little/Large/Fire are one variable that starts as Little:
/// beginning one replaces the others, and ending the current one falls back
/// to Little.
pub fn expand_continuous(session: &RawSession, schema: &EventSchema) -> Result<EventStates> {
    let mut rows = vec![[0u8; EVENT_COUNT]; session.length];
    let mut active = [false; EVENT_COUNT];
    let mut size = LITTLE;
    let mut next = session.ticks.iter().peekable();

    let fail = |tick: usize, msg: String| Error::Session {
        session: session.label(),
        message: format!("tick {tick}: {msg}"),
    };

    for (t, row) in rows.iter_mut().enumerate() {
        let mut fires: Vec<usize> = Vec::new();
        if let Some(te) = next.next_if(|te| te.tick == t) {
            for m in te.markers.iter().filter(|m| m.kind == MarkerKind::End) {
                if schema.is_size_state(m.event) {
                    if size != m.event {
                        return Err(fail(t, format!("{} ends before it begins", schema.name(m.event))));
                    }
                    size = LITTLE;
                } else {
                    if !active[m.event] {
                        return Err(fail(t, format!("{} ends before it begins", schema.name(m.event))));
                    }
                    active[m.event] = false;
                }
            }
            for m in &te.markers {
                match m.kind {
                    MarkerKind::Begin if schema.is_size_state(m.event) => size = m.event,
                    MarkerKind::Begin => active[m.event] = true,
                    MarkerKind::Fire => fires.push(m.event),
                    MarkerKind::End => {}
                }
            }
        }
        for (e, on) in active.iter().enumerate() {
            if *on {
                row[e] = 1;
            }
        }
        row[size] = 1;
        for e in fires {
            row[e] = 1;
        }
    }
    if let Some(te) = next.next() {
        return Err(fail(te.tick, format!("beyond session length {}", session.length)));
    }
    Ok(EventStates { rows })
}

/// Constant-speed movement model for x reconstruction, in tiles per tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub walk_speed: f64,
    pub run_multiplier: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Kinematics {
            walk_speed: 0.1,
            run_multiplier: 2.0,
        }
    }
}

impl Kinematics {
    pub fn validate(&self) -> Result<()> {
        if !(self.walk_speed > 0.0) || !(self.run_multiplier >= 1.0) {
            return Err(Error::Config(format!(
                "walk_speed must be > 0 and run_multiplier >= 1, got {} and {}",
                self.walk_speed, self.run_multiplier
            )));
        }
        Ok(())
    }
}

/// Dead-reckoned x position at the start of each tick.
///
/// `x[0] = 0`; each tick moves right/left at walk speed (times the run
/// multiplier while Running), always at full speed, clamped to
/// `[0, level_width - 1]`. Right and left together cancel.
pub fn reconstruct_x(states: &EventStates, kin: &Kinematics, level_width: usize) -> Result<Vec<f64>> {
    kin.validate()?;
    if level_width == 0 {
        return Err(Error::Argument("level width must be positive".into()));
    }
    let max_x = (level_width - 1) as f64;
    let mut x = 0.0f64;
    let mut out = Vec::with_capacity(states.len());
    for row in &states.rows {
        out.push(x);
        let dir = f64::from(row[RIGHT_MOVE]) - f64::from(row[LEFT_MOVE]);
        let speed = if row[RUNNING] == 1 {
            kin.walk_speed * kin.run_multiplier
        } else {
            kin.walk_speed
        };
        x = (x + dir * speed).clamp(0.0, max_x);
    }
    Ok(out)
}

/// Where one session sits inside a stacked [`LogMatrix`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSpan {
    pub id: String,
    pub player_id: String,
    /// Index of the level grid this session was played on.
    pub level: usize,
    pub start: usize,
    pub len: usize,
}

impl SessionSpan {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// One session encoded to 37-column rows, before cropping.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub id: String,
    pub player_id: String,
    pub level: usize,
    pub rows: Vec<[f64; COLUMNS]>,
}

pub fn encode_session(
    session: &RawSession,
    schema: &EventSchema,
    kin: &Kinematics,
    level_width: usize,
) -> Result<SessionLog> {
    let states = expand_continuous(session, schema)?;
    let xs = reconstruct_x(&states, kin, level_width)?;
    let rows = states
        .rows
        .iter()
        .zip(xs)
        .map(|(s, x)| {
            let mut r = [0.0; COLUMNS];
            for (dst, &v) in r.iter_mut().zip(s.iter()) {
                *dst = f64::from(v);
            }
            for (k, &d) in session.demographics.iter().enumerate() {
                r[DEMOGRAPHIC_COLUMNS.start + k] = f64::from(d);
            }
            r[LEVEL_COLUMN] = session.level_index as f64;
            r[X_COLUMN] = x;
            r
        })
        .collect();
    Ok(SessionLog {
        id: session.label(),
        player_id: session.player_id.clone(),
        level: session.level_index,
        rows,
    })
}

/// All sessions of a corpus as one `T × 37` matrix with recorded boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMatrix {
    pub rows: Vec<[f64; COLUMNS]>,
    pub spans: Vec<SessionSpan>,
}

impl LogMatrix {
    pub fn timesteps(&self) -> usize {
        self.rows.len()
    }

    /// Index of the span containing timestep `t`.
    pub fn span_of(&self, t: usize) -> usize {
        self.spans.partition_point(|s| s.end() <= t)
    }
}

/// Truncates every session to its first `t_fixed` ticks and concatenates
/// them in order.
pub fn crop_and_stack(sessions: &[SessionLog], t_fixed: usize) -> Result<LogMatrix> {
    let mut rows = Vec::with_capacity(sessions.len() * t_fixed);
    let mut spans = Vec::with_capacity(sessions.len());
    for s in sessions {
        if s.rows.len() < t_fixed {
            return Err(Error::Session {
                session: s.id.clone(),
                message: format!("only {} ticks, need at least {t_fixed}", s.rows.len()),
            });
        }
        spans.push(SessionSpan {
            id: s.id.clone(),
            player_id: s.player_id.clone(),
            level: s.level,
            start: rows.len(),
            len: t_fixed,
        });
        rows.extend_from_slice(&s.rows[..t_fixed]);
    }
    Ok(LogMatrix { rows, spans })
}

/// Stand-in logs for levels nobody played: every event and demographic is
/// zero, the level tag is uniform in 0..=15 per step, and x advances one tile
/// per step, giving one timestep per tile column.
pub fn synthesize_empty_logs<R: Rng + ?Sized>(level_widths: &[usize], rng: &mut R) -> LogMatrix {
    let mut rows = Vec::with_capacity(level_widths.iter().sum());
    let mut spans = Vec::with_capacity(level_widths.len());
    for (level, &w) in level_widths.iter().enumerate() {
        spans.push(SessionSpan {
            id: format!("empty/level{level}"),
            player_id: String::new(),
            level,
            start: rows.len(),
            len: w,
        });
        for x in 0..w {
            let mut r = [0.0; COLUMNS];
            r[LEVEL_COLUMN] = rng.gen_range(0..=MAX_LEVEL_INDEX) as f64;
            r[X_COLUMN] = x as f64;
            rows.push(r);
        }
    }
    LogMatrix { rows, spans }
}

/// Reads the session files named in `manifest` (one path per line, relative
/// to `dir`, `#` comments allowed) in manifest order.
pub fn import_sessions(dir: &Path, manifest: &Path, schema: &EventSchema) -> Result<Vec<RawSession>> {
    let listing = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut out = Vec::new();
    for line in listing.lines() {
        let name = line.trim();
        if name.is_empty() || name.starts_with('#') {
            continue;
        }
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let session = parse_session(&text, schema).map_err(|e| Error::Session {
            session: name.to_string(),
            message: e.to_string(),
        })?;
        out.push(session);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn schema() -> EventSchema {
        EventSchema::infinite_mario()
    }

    fn session_with(length: usize, records: &[(usize, &str, &str)]) -> RawSession {
        let mut text = format!("#player p\n#level 0\n#length {length}\n");
        for (t, e, k) in records {
            text.push_str(&format!("{t}\t{e}\t{k}\n"));
        }
        parse_session(&text, &schema()).unwrap()
    }

    #[test]
    fn schema_matches_event_list() {
        let s = schema();
        assert_eq!(s.names().len(), 31);
        assert_eq!(s.name(0), "StartLevel");
        assert_eq!(s.name(30), "CollectCoinBulletBill");
        assert_eq!(s.index_of("RightMove"), Some(4));
        assert_eq!(s.index_of("Fire"), Some(10));
        assert!(s.is_continuous(4) && s.is_continuous(10));
        assert!(!s.is_continuous(3) && !s.is_continuous(11));
        let mut dup = s.names().to_vec();
        dup[1] = dup[0].clone();
        assert!(EventSchema::new(dup, 4..=10).is_err());
        assert!(EventSchema::new(s.names().to_vec(), 4..=31).is_err());
    }

    #[test]
    fn minimal_file() {
        let s = parse_session("#player a\n#level 0\n0\tStartLevel\tfire\n", &schema()).unwrap();
        assert_eq!(s.marker_count(), 1);
        assert_eq!(s.length, 1);
        assert_eq!(s.ticks[0].markers[0], EventMarker { event: 0, kind: MarkerKind::Fire });
    }

    #[test]
    fn unknown_event_is_named() {
        let err = parse_session("#player a\n#level 0\n3\tFlying\tfire\n", &schema()).unwrap_err();
        assert!(matches!(&err, Error::UnknownEvents(v) if v == &["Flying".to_string()]));
        assert!(err.to_string().contains("Flying"));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let cases = [
            "#player a\n#level 0\n1 StartLevel fire\n",
            "#player a\n#level 0\nx\tStartLevel\tfire\n",
            "#player a\n#level 0\n1\tStartLevel\tboom\n",
            "#player a\n#level 0\n1\tRightMove\tfire\n",
            "#player a\n#level 0\n1\tJumping\tbegin\n",
            "#player a\n#level 0\n5\tJumping\tfire\n3\tJumping\tfire\n",
        ];
        for text in cases {
            match parse_session(text, &schema()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, text.lines().count(), "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(parse_session("#player a\n#level 16\n", &schema()).is_err());
        assert!(parse_session("#player a\n#level 0\n#demo 0 1 5 2\n", &schema()).is_err());
        assert!(parse_session("#level 0\n", &schema()).is_err());
    }

    #[test]
    fn continuous_event_spans_begin_to_session_end() {
        let s = session_with(10, &[(5, "Large", "begin")]);
        let st = expand_continuous(&s, &schema()).unwrap();
        for t in 0..10 {
            assert_eq!(st.get(t, LARGE), t >= 5, "tick {t}");
            assert_eq!(st.get(t, LITTLE), t < 5, "tick {t}");
        }
    }

    #[test]
    fn fire_replaces_little() {
        let s = session_with(6, &[(3, "Fire", "begin")]);
        let st = expand_continuous(&s, &schema()).unwrap();
        for t in 0..6 {
            assert_eq!(st.get(t, LITTLE), t < 3);
            assert_eq!(st.get(t, FIRE), t >= 3);
        }
    }

    #[test]
    fn default_size_is_little() {
        let s = session_with(4, &[(1, "Jumping", "fire")]);
        let st = expand_continuous(&s, &schema()).unwrap();
        assert!((0..4).all(|t| st.get(t, LITTLE) && !st.get(t, LARGE) && !st.get(t, FIRE)));
        assert!(st.get(1, 3) && !st.get(0, 3) && !st.get(2, 3));
    }

    #[test]
    fn end_before_begin_is_an_error() {
        let s = session_with(5, &[(2, "RightMove", "end")]);
        assert!(expand_continuous(&s, &schema()).is_err());
        let s = session_with(5, &[(2, "Large", "end")]);
        assert!(expand_continuous(&s, &schema()).is_err());
        let s = session_with(5, &[(1, "RightMove", "begin"), (3, "RightMove", "end")]);
        let st = expand_continuous(&s, &schema()).unwrap();
        assert_eq!((0..5).map(|t| st.get(t, RIGHT_MOVE)).collect::<Vec<_>>(), [false, true, true, false, false]);
    }

    #[test]
    fn x_reconstruction() {
        let kin = Kinematics::default();
        let still = expand_continuous(&session_with(20, &[]), &schema()).unwrap();
        assert!(reconstruct_x(&still, &kin, 100).unwrap().iter().all(|&x| x == 0.0));

        let walk = session_with(11, &[(0, "RightMove", "begin"), (10, "RightMove", "end")]);
        let xs = reconstruct_x(&expand_continuous(&walk, &schema()).unwrap(), &kin, 100).unwrap();
        assert_relative_eq!(xs[10], 1.0, epsilon = 1e-12);

        let run = session_with(
            6,
            &[(0, "RightMove", "begin"), (0, "Running", "begin"), (5, "RightMove", "end"), (5, "Running", "end")],
        );
        let xs = reconstruct_x(&expand_continuous(&run, &schema()).unwrap(), &kin, 100).unwrap();
        assert_relative_eq!(xs[5], 1.0, epsilon = 1e-12);

        let both = session_with(5, &[(0, "RightMove", "begin"), (0, "LeftMove", "begin")]);
        let xs = reconstruct_x(&expand_continuous(&both, &schema()).unwrap(), &kin, 100).unwrap();
        assert!(xs.iter().all(|&x| x == 0.0));
        assert!(reconstruct_x(&still, &Kinematics { walk_speed: 0.0, run_multiplier: 2.0 }, 10).is_err());
    }

    fn log_of(len: usize, id: &str) -> SessionLog {
        SessionLog {
            id: id.into(),
            player_id: "p".into(),
            level: 0,
            rows: vec![[0.0; COLUMNS]; len],
        }
    }

    #[test]
    fn crop_and_stack_counts() {
        let m = crop_and_stack(&[log_of(904, "a")], SESSION_TICKS).unwrap();
        assert_eq!(m.timesteps(), 904);
        let m = crop_and_stack(&[log_of(1000, "a"), log_of(1000, "b")], SESSION_TICKS).unwrap();
        assert_eq!(m.timesteps(), 1808);
        assert_eq!(m.spans[1].start, 904);
        assert_eq!(m.span_of(903), 0);
        assert_eq!(m.span_of(904), 1);
        let err = crop_and_stack(&[log_of(904, "a"), log_of(903, "short")], SESSION_TICKS).unwrap_err();
        assert!(err.to_string().contains("short"));
        // 75 players × 3 sessions
        let sessions: Vec<_> = (0..225).map(|i| log_of(904, &i.to_string())).collect();
        assert_eq!(crop_and_stack(&sessions, SESSION_TICKS).unwrap().timesteps(), 203_400);
    }

    #[test]
    fn empty_logs() {
        let mut rng = crate::rng::seeded(3);
        let m = synthesize_empty_logs(&[172; 4], &mut rng);
        assert_eq!(m.timesteps(), 688);
        assert_eq!(synthesize_empty_logs(&[150; 15], &mut rng).timesteps(), 2250);
        let one = synthesize_empty_logs(&[1], &mut rng);
        assert_eq!(one.timesteps(), 1);
        assert_eq!(one.rows[0][X_COLUMN], 0.0);
        for (t, r) in m.rows.iter().enumerate() {
            assert!(r[..LEVEL_COLUMN].iter().all(|&v| v == 0.0));
            assert!((0.0..=15.0).contains(&r[LEVEL_COLUMN]) && r[LEVEL_COLUMN].fract() == 0.0);
            assert_eq!(r[X_COLUMN], (t % 172) as f64);
        }
        let tags: BTreeSet<u64> = m.rows.iter().map(|r| r[LEVEL_COLUMN] as u64).collect();
        assert!(tags.len() > 10);
    }

    fn marker_strategy() -> impl Strategy<Value = Vec<(usize, usize, u8)>> {
        // (tick, event among the continuous range, 0 = begin / 1 = end)
        proptest::collection::vec((0usize..60, RIGHT_MOVE..=FIRE, 0u8..2), 0..40)
    }

    fn build(markers: &[(usize, usize, u8)]) -> RawSession {
        let mut sorted = markers.to_vec();
        sorted.sort_by_key(|m| m.0);
        let mut ticks: Vec<TickEvents> = Vec::new();
        for &(t, e, k) in &sorted {
            // keep only markers that are legal in sequence
            let kind = if k == 0 { MarkerKind::Begin } else { MarkerKind::End };
            match ticks.last_mut() {
                Some(last) if last.tick == t => last.markers.push(EventMarker { event: e, kind }),
                _ => ticks.push(TickEvents { tick: t, markers: vec![EventMarker { event: e, kind }] }),
            }
        }
        RawSession { player_id: "f".into(), level_index: 0, demographics: [0; 4], length: 60, ticks }
    }

    /// Drops end markers that would fail so fuzzed sequences stay legal.
    fn legalise(mut s: RawSession, schema: &EventSchema) -> RawSession {
        loop {
            match expand_continuous(&s, schema) {
                Ok(_) => return s,
                Err(Error::Session { message, .. }) => {
                    let tick: usize = message
                        .trim_start_matches("tick ")
                        .split(':')
                        .next()
                        .unwrap()
                        .parse()
                        .unwrap();
                    let te = s.ticks.iter_mut().find(|t| t.tick == tick).unwrap();
                    let pos = te.markers.iter().position(|m| m.kind == MarkerKind::End).unwrap();
                    te.markers.remove(pos);
                    s.ticks.retain(|t| !t.markers.is_empty());
                }
                Err(e) => panic!("{e}"),
            }
        }
    }

    proptest! {
        #[test]
        fn size_states_stay_exclusive(markers in marker_strategy()) {
            let schema = schema();
            let s = legalise(build(&markers), &schema);
            let st = expand_continuous(&s, &schema).unwrap();
            for row in &st.rows {
                prop_assert_eq!(row[LITTLE] + row[LARGE] + row[FIRE], 1);
            }
        }

        #[test]
        fn x_stays_inside_level(markers in marker_strategy(), width in 1usize..8,
                                walk in 0.01f64..3.0, mult in 1.0f64..4.0) {
            let schema = schema();
            let s = legalise(build(&markers), &schema);
            let st = expand_continuous(&s, &schema).unwrap();
            let kin = Kinematics { walk_speed: walk, run_multiplier: mult };
            let xs = reconstruct_x(&st, &kin, width).unwrap();
            prop_assert!(xs.iter().all(|&x| x >= 0.0 && x <= (width - 1) as f64));
        }

        #[test]
        fn canonical_text_round_trips(markers in marker_strategy(), demo in proptest::array::uniform4(0u8..5)) {
            let schema = schema();
            let mut s = legalise(build(&markers), &schema);
            s.demographics = demo;
            let text = s.to_canonical(&schema);
            let parsed = parse_session(&text, &schema).unwrap();
            prop_assert_eq!(parsed.to_canonical(&schema), text);
            prop_assert_eq!(parsed, s);
        }
    }
}
