//! Synthetic levels, play sessions and labels with a planted, learnable
//! signal, plus foreign-corpus fixtures for cross-domain evaluation.
//!
//! Level `k` belongs to class `k % 3`. Class 0 levels carry a 3×3 ring of
//! question and used blocks every eight columns, class 1 levels a 3×3
//! cannon-and-platform block, class 2 levels neither. Sessions on class 0
//! levels contain bursts of `CollectCoin`, class 1 bursts of
//! `StompKillGoomba`, class 2 bursts of `BlockCoinDestroy`. For metric `m`
//! the label of level `k` is rank `(k % 3 + shift(m)) % 3`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::labels::{LabelTable, Metric, RankLabel};
use crate::levels::{Palette, TILE_CHANNELS};
use crate::logs::{EventSchema, MAX_LEVEL_INDEX, SESSION_TICKS};
use crate::rng::{derive, Rng64};

pub const LEVEL_TEXT_HEIGHT: usize = 14;
const MOTIF_SPACING: usize = 8;
const MOTIF_TOP: usize = 6;

const MOTIFS: [Option<[&str; 3]>; 3] = [Some(["?Q?", "Q?Q", "?Q?"]), Some(["BTB", "bTb", "bTb"]), None];
const BURST_EVENTS: [&str; 3] = ["CollectCoin", "StompKillGoomba", "BlockCoinDestroy"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub levels: usize,
    /// Level width in tiles before cropping.
    pub width: usize,
    /// Relative fill weight per palette channel for the open area.
    pub densities: [f64; TILE_CHANNELS],
    pub players: usize,
    pub session_length: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(levels: usize, players: usize, seed: u64) -> Self {
        let palette = Palette::infinite_mario();
        let mut densities = [0.0; TILE_CHANNELS];
        for (name, w) in [
            ("empty", 88.0),
            ("breakable-brick", 4.0),
            ("coin", 3.0),
            ("rock", 2.0),
            ("goomba", 2.0),
            ("green-koopa", 1.0),
        ] {
            densities[palette.id_of_name(name).expect("palette tile") as usize] = w;
        }
        SynthSpec {
            levels,
            width: 206,
            densities,
            players,
            session_length: SESSION_TICKS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=MAX_LEVEL_INDEX + 1).contains(&self.levels) {
            return Err(Error::Config(format!(
                "synthetic corpus needs 3..={} levels, got {}",
                MAX_LEVEL_INDEX + 1,
                self.levels
            )));
        }
        if self.width < 198 {
            return Err(Error::Config(format!("level width {} is below the 198-column crop", self.width)));
        }
        if self.session_length < SESSION_TICKS {
            return Err(Error::Config(format!(
                "session length {} is below {SESSION_TICKS}",
                self.session_length
            )));
        }
        if self.players == 0 {
            return Err(Error::Config("need at least one player".into()));
        }
        if self.densities.iter().any(|d| !(*d >= 0.0)) || self.densities.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("tile densities must be non-negative with a positive sum".into()));
        }
        Ok(())
    }
}

/// Rank offset applied per metric so each metric has its own labelling.
pub fn metric_shift(metric: Metric) -> usize {
    match metric {
        Metric::Fun | Metric::Design => 0,
        Metric::Frustration | Metric::Creativity => 1,
        Metric::Challenge => 2,
    }
}

pub fn level_class(level: usize) -> usize {
    level % 3
}

pub fn label_for(level: usize, metric: Metric) -> RankLabel {
    RankLabel::ALL[(level_class(level) + metric_shift(metric)) % 3]
}

/// Files of one generated corpus, as relative path and contents.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub files: Vec<(String, String)>,
}

impl SynthOutput {
    pub fn get(&self, path: &str) -> Option<&str> {
        self.files.iter().find(|(p, _)| p == path).map(|(_, t)| t.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (rel, text) in &self.files {
            write_atomic(&dir.join(rel), text.as_bytes())?;
        }
        Ok(())
    }
}

fn pick_weighted(rng: &mut Rng64, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).expect("positive total")
}

fn level_text(spec: &SynthSpec, level: usize, palette: &Palette) -> String {
    let mut rng = derive(spec.seed, &[1, level as u64]);
    let w = spec.width;
    let mut rows = vec![vec!['-'; w]; LEVEL_TEXT_HEIGHT];
    for row in rows.iter_mut().take(LEVEL_TEXT_HEIGHT - 2).skip(4) {
        for cell in row.iter_mut() {
            *cell = palette.tile(pick_weighted(&mut rng, &spec.densities) as u8).ch;
        }
    }
    rows[LEVEL_TEXT_HEIGHT - 2].fill('X');
    rows[LEVEL_TEXT_HEIGHT - 1].fill('#');
    if let Some(motif) = MOTIFS[level_class(level)] {
        for x0 in (0..w.saturating_sub(2)).step_by(MOTIF_SPACING) {
            for (dy, line) in motif.iter().enumerate() {
                for (dx, ch) in line.chars().enumerate() {
                    rows[MOTIF_TOP + dy][x0 + dx] = ch;
                }
            }
        }
    }
    rows.iter().map(|r| r.iter().collect::<String>() + "\n").collect()
}

fn session_text(spec: &SynthSpec, schema: &EventSchema, player: usize, level: usize) -> String {
    let mut rng = derive(spec.seed, &[2, player as u64, level as u64]);
    let len = spec.session_length;
    let mut markers: Vec<(usize, &str, &str)> = vec![(0, "StartLevel", "fire")];

    // movement: right-walk segments separated by short pauses, sometimes running
    let mut t = 0;
    while t < len - 1 {
        let walk = rng.gen_range(20..80).min(len - 1 - t);
        markers.push((t, "RightMove", "begin"));
        if rng.gen_bool(0.3) {
            markers.push((t, "Running", "begin"));
            markers.push((t + walk, "Running", "end"));
        }
        markers.push((t + walk, "RightMove", "end"));
        t += walk + rng.gen_range(1..10);
    }
    for t in (5..len - 1).step_by(7) {
        if rng.gen_bool(0.4) {
            markers.push((t, "Jumping", "fire"));
        }
    }
    let grow = rng.gen_range(100..400);
    markers.push((grow, "Large", "begin"));
    markers.push((grow + rng.gen_range(100..400), "Large", "end"));

    let burst = BURST_EVENTS[level_class(level)];
    let mut t = rng.gen_range(0..6);
    while t + 3 < len - 1 {
        for k in 0..3 {
            markers.push((t + k, burst, "fire"));
        }
        t += rng.gen_range(6..12);
    }
    markers.push((len - 1, "WonLevel", "fire"));
    markers.sort_by_key(|m| m.0);
    debug_assert!(markers.iter().all(|m| schema.index_of(m.1).is_some()));

    let mut out = String::new();
    let _ = writeln!(out, "#player p{player:02}");
    let _ = writeln!(out, "#level {level}");
    let demo: Vec<String> = (0..4).map(|_| rng.gen_range(0..=4).to_string()).collect();
    let _ = writeln!(out, "#demo {}", demo.join(" "));
    let _ = writeln!(out, "#length {len}");
    for (t, e, k) in markers {
        let _ = writeln!(out, "{t}\t{e}\t{k}");
    }
    out
}

/// Levels under `levels/`, sessions under `logs/` with a `manifest.txt`,
/// and `labels.tsv`.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let palette = Palette::infinite_mario();
    let schema = EventSchema::infinite_mario();
    let mut files = Vec::new();
    for level in 0..spec.levels {
        files.push((format!("levels/level{level:02}.txt"), level_text(spec, level, &palette)));
    }
    let by_class: Vec<Vec<usize>> = (0..3)
        .map(|c| (0..spec.levels).filter(|&l| level_class(l) == c).collect())
        .collect();
    let mut manifest = String::new();
    let mut labels = LabelTable::new();
    for player in 0..spec.players {
        let mut rng = derive(spec.seed, &[3, player as u64]);
        let mut played: Vec<usize> = by_class
            .iter()
            .map(|ls| *ls.choose(&mut rng).expect("every class has a level"))
            .collect();
        played.shuffle(&mut rng);
        for &level in &played {
            let name = format!("p{player:02}_level{level:02}.log");
            files.push((format!("logs/{name}"), session_text(spec, &schema, player, level)));
            let _ = writeln!(manifest, "{name}");
            for metric in Metric::ALL {
                labels.insert(&format!("p{player:02}"), metric, level, label_for(level, metric));
            }
        }
    }
    files.push(("logs/manifest.txt".into(), manifest));
    files.push(("labels.tsv".into(), labels.to_text()));
    Ok(SynthOutput { files })
}

/// Four 180-column Gwario-style levels using that corpus' extra tiles,
/// with `ratings.tsv` giving each level a distinct mean per metric.
pub fn generate_gwario(seed: u64) -> SynthOutput {
    let mut files = Vec::new();
    let fill = ['-', '-', '-', '-', '-', '-', '-', '-', 'S', 'o', 'g', 'r', 'P', 'p', 's', '?'];
    for level in 0..4 {
        let mut rng = derive(seed, &[10, level as u64]);
        let mut rows = vec![vec!['-'; 180]; LEVEL_TEXT_HEIGHT];
        for row in rows.iter_mut().take(LEVEL_TEXT_HEIGHT - 2).skip(4) {
            for cell in row.iter_mut() {
                *cell = *fill.choose(&mut rng).expect("non-empty");
            }
        }
        rows[LEVEL_TEXT_HEIGHT - 2].fill('X');
        rows[LEVEL_TEXT_HEIGHT - 1].fill('s');
        let text = rows.iter().map(|r| r.iter().collect::<String>() + "\n").collect();
        files.push((format!("levels/gwario{level}.txt"), text));
    }
    let mut ratings = String::new();
    let mut rng = derive(seed, &[11]);
    for metric in [Metric::Fun, Metric::Frustration, Metric::Challenge] {
        let mut base = [1.5, 2.5, 3.5, 4.5];
        base.shuffle(&mut rng);
        for (level, b) in base.iter().enumerate() {
            for delta in [-0.5, 0.0, 0.5] {
                let _ = writeln!(ratings, "{level}\t{metric}\t{}", b + delta);
            }
        }
    }
    files.push(("ratings.tsv".into(), ratings));
    SynthOutput { files }
}

/// Fifteen VGLC-style levels, 150 to 170 columns, growing denser with enemies
/// and gaps in play order. File names sort in play order.
pub fn generate_smb(seed: u64) -> SynthOutput {
    let mut files = Vec::new();
    for level in 0..15 {
        let mut rng = derive(seed, &[20, level as u64]);
        let width = rng.gen_range(150..=170);
        let mut rows = vec![vec!['-'; width]; LEVEL_TEXT_HEIGHT];
        rows[LEVEL_TEXT_HEIGHT - 2].fill('X');
        rows[LEVEL_TEXT_HEIGHT - 1].fill('X');
        let danger = 0.01 + 0.01 * level as f64;
        for x in 3..width - 3 {
            if rng.gen_bool(danger) {
                rows[LEVEL_TEXT_HEIGHT - 3][x] = 'E';
            }
            if rng.gen_bool(danger / 2.0) {
                rows[LEVEL_TEXT_HEIGHT - 2][x] = '-';
                rows[LEVEL_TEXT_HEIGHT - 1][x] = '-';
            }
            if rng.gen_bool(0.05) {
                rows[8][x] = *['?', 'S', 'Q', 'o'].choose(&mut rng).expect("non-empty");
            }
            if rng.gen_bool(0.02) {
                rows[6][x] = 'X';
            }
        }
        for x in (20..width - 2).step_by(37) {
            rows[LEVEL_TEXT_HEIGHT - 4][x] = '<';
            rows[LEVEL_TEXT_HEIGHT - 4][x + 1] = '>';
            rows[LEVEL_TEXT_HEIGHT - 3][x] = '[';
            rows[LEVEL_TEXT_HEIGHT - 3][x + 1] = ']';
        }
        if level >= 8 {
            rows[LEVEL_TEXT_HEIGHT - 4][width / 2] = 'B';
            rows[LEVEL_TEXT_HEIGHT - 3][width / 2] = 'b';
        }
        let text = rows.iter().map(|r| r.iter().collect::<String>() + "\n").collect();
        files.push((format!("levels/smb{level:02}.txt"), text));
    }
    SynthOutput { files }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{mean_ratings, parse_ratings, ratings_to_rankings};
    use crate::levels::{load_level, parse_level, Corpus, RemapTable};
    use crate::logs::{encode_session, expand_continuous, parse_session, Kinematics, LARGE, LITTLE, FIRE};

    #[test]
    fn small_spec_yields_three_full_sessions() {
        let out = generate(&SynthSpec::new(3, 1, 4)).unwrap();
        let schema = EventSchema::infinite_mario();
        let manifest = out.get("logs/manifest.txt").unwrap();
        assert_eq!(manifest.lines().count(), 3);
        for name in manifest.lines() {
            let s = parse_session(out.get(&format!("logs/{name}")).unwrap(), &schema).unwrap();
            assert_eq!(s.length, 904);
            assert_eq!(expand_continuous(&s, &schema).unwrap().len(), 904);
        }
    }

    #[test]
    fn everything_round_trips_through_ingest() {
        let spec = SynthSpec::new(16, 5, 8);
        let out = generate(&spec).unwrap();
        let palette = Palette::infinite_mario();
        let schema = EventSchema::infinite_mario();
        let crop = Corpus::InfiniteMario.crop();
        for l in 0..16 {
            let text = out.get(&format!("levels/level{l:02}.txt")).unwrap();
            let g = load_level(text, &palette, None, Some(&crop), l).unwrap();
            assert_eq!((g.width, g.height), (198, 10));
            assert_eq!(parse_level(text, &palette, l).unwrap().height, LEVEL_TEXT_HEIGHT);
        }
        let labels = LabelTable::parse(out.get("labels.tsv").unwrap()).unwrap();
        for m in Metric::ALL {
            labels.check_balanced(m).unwrap();
        }
        for name in out.get("logs/manifest.txt").unwrap().lines() {
            let s = parse_session(out.get(&format!("logs/{name}")).unwrap(), &schema).unwrap();
            let states = expand_continuous(&s, &schema).unwrap();
            for row in &states.rows {
                assert_eq!(row[LITTLE] + row[LARGE] + row[FIRE], 1);
            }
            let enc = encode_session(&s, &schema, &Kinematics::default(), 198).unwrap();
            assert!(enc.rows.windows(2).all(|w| (w[1][36] - w[0][36]).abs() <= 0.2 + 1e-12));
            assert!(enc.rows.iter().any(|r| r[36] > 20.0));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&SynthSpec::new(6, 2, 1)).unwrap(), generate(&SynthSpec::new(6, 2, 1)).unwrap());
        assert_ne!(generate(&SynthSpec::new(6, 2, 1)).unwrap(), generate(&SynthSpec::new(6, 2, 2)).unwrap());
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec::new(2, 1, 0)).is_err());
        assert!(generate(&SynthSpec::new(17, 1, 0)).is_err());
        let mut s = SynthSpec::new(3, 1, 0);
        s.session_length = 900;
        assert!(generate(&s).is_err());
        let mut s = SynthSpec::new(3, 1, 0);
        s.densities[0] = -1.0;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn foreign_fixtures_load_with_their_remaps() {
        let palette = Palette::infinite_mario();
        let gw = generate_gwario(3);
        let remap = RemapTable::parse(include_str!("../../../configs/gwario.remap"), &palette).unwrap();
        for l in 0..4 {
            let g = load_level(
                gw.get(&format!("levels/gwario{l}.txt")).unwrap(),
                &palette,
                Some(&remap),
                Some(&Corpus::Gwario.crop()),
                l,
            )
            .unwrap();
            assert_eq!((g.width, g.height), (172, 10));
        }
        let ratings = parse_ratings(gw.get("ratings.tsv").unwrap()).unwrap();
        let ranks = ratings_to_rankings(&mean_ratings(&ratings, Metric::Challenge, 4).unwrap()).unwrap();
        let mut sorted = ranks.clone();
        sorted.sort();
        assert_eq!(sorted, vec![RankLabel::Most, RankLabel::Mid, RankLabel::Mid, RankLabel::Least]);

        let smb = generate_smb(3);
        let remap = RemapTable::parse(include_str!("../../../configs/smb.remap"), &palette).unwrap();
        for l in 0..15 {
            let g = load_level(
                smb.get(&format!("levels/smb{l:02}.txt")).unwrap(),
                &palette,
                Some(&remap),
                Some(&Corpus::Smb.crop()),
                l,
            )
            .unwrap();
            assert_eq!((g.width, g.height), (150, 10));
        }
    }
}
