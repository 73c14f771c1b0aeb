//! Player rankings, questionnaire ratings, and the conversion between them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logs::SessionSpan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Fun,
    Frustration,
    Challenge,
    Design,
    Creativity,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Fun,
        Metric::Frustration,
        Metric::Challenge,
        Metric::Design,
        Metric::Creativity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Fun => "fun",
            Metric::Frustration => "frustration",
            Metric::Challenge => "challenge",
            Metric::Design => "design",
            Metric::Creativity => "creativity",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown metric {s:?}")))
    }
}

/// A level's rank among a player's three levels. The discriminant is the
/// class index the network predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankLabel {
    Most = 0,
    Mid = 1,
    Least = 2,
}

impl RankLabel {
    pub const ALL: [RankLabel; 3] = [RankLabel::Most, RankLabel::Mid, RankLabel::Least];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        RankLabel::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Argument(format!("class index {i} out of range 0..3")))
    }

    pub fn name(self) -> &'static str {
        match self {
            RankLabel::Most => "most",
            RankLabel::Mid => "mid",
            RankLabel::Least => "least",
        }
    }
}

impl fmt::Display for RankLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RankLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RankLabel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown rank label {s:?}")))
    }
}

fn split_fields<const N: usize>(line: &str, lineno: usize, what: &str) -> Result<[String; N]> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    <[&str; N]>::try_from(fields.as_slice())
        .map(|a| a.map(str::to_string))
        .map_err(|_| Error::parse(lineno, format!("expected {N} tab-separated fields for {what}, got {}", fields.len())))
}

/// `player<TAB>metric<TAB>level<TAB>{most|mid|least}` records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    entries: BTreeMap<(String, Metric, usize), RankLabel>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = LabelTable::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let [player, metric, level, label] = split_fields::<4>(line, lineno, "a label")?;
            let metric: Metric = metric.parse().map_err(|e: Error| Error::parse(lineno, e.to_string()))?;
            let level: usize = level
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad level index {level:?}")))?;
            let label: RankLabel = label.parse().map_err(|e: Error| Error::parse(lineno, e.to_string()))?;
            if table.entries.insert((player.clone(), metric, level), label).is_some() {
                return Err(Error::parse(
                    lineno,
                    format!("duplicate label for player {player}, {metric}, level {level}"),
                ));
            }
        }
        Ok(table)
    }

    pub fn insert(&mut self, player: &str, metric: Metric, level: usize, label: RankLabel) {
        self.entries.insert((player.to_string(), metric, level), label);
    }

    pub fn get(&self, player: &str, metric: Metric, level: usize) -> Option<RankLabel> {
        self.entries.get(&(player.to_string(), metric, level)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|((p, m, l), lab)| format!("{p}\t{m}\t{l}\t{lab}\n"))
            .collect()
    }

    /// The label of every span, in span order.
    pub fn session_labels(&self, spans: &[SessionSpan], metric: Metric) -> Result<Vec<RankLabel>> {
        spans
            .iter()
            .map(|s| {
                self.get(&s.player_id, metric, s.level).ok_or_else(|| Error::Session {
                    session: s.id.clone(),
                    message: format!("no {metric} label"),
                })
            })
            .collect()
    }

    /// Every player with labels for `metric` ranks exactly three levels,
    /// one of each class.
    pub fn check_balanced(&self, metric: Metric) -> Result<()> {
        let mut per_player: BTreeMap<&str, Vec<RankLabel>> = BTreeMap::new();
        for ((p, m, _), &l) in &self.entries {
            if *m == metric {
                per_player.entry(p).or_default().push(l);
            }
        }
        for (p, mut labels) in per_player {
            labels.sort();
            if labels != RankLabel::ALL {
                return Err(Error::Config(format!(
                    "player {p}: {metric} labels are {labels:?}, expected one each of most, mid, least"
                )));
            }
        }
        Ok(())
    }
}

/// One questionnaire answer: `level<TAB>metric<TAB>rating`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub level: usize,
    pub metric: Metric,
    pub rating: f64,
}

pub fn parse_ratings(text: &str) -> Result<Vec<Rating>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let [level, metric, rating] = split_fields::<3>(line, lineno, "a rating")?;
        let level = level
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad level index {level:?}")))?;
        let metric = metric.parse().map_err(|e: Error| Error::parse(lineno, e.to_string()))?;
        let rating: f64 = rating
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad rating {rating:?}")))?;
        if !(1.0..=5.0).contains(&rating) {
            return Err(Error::parse(lineno, format!("rating {rating} outside 1..=5")));
        }
        out.push(Rating { level, metric, rating });
    }
    Ok(out)
}

/// Mean rating per level for one metric; every level below `level_count`
/// must have at least one answer.
pub fn mean_ratings(ratings: &[Rating], metric: Metric, level_count: usize) -> Result<Vec<f64>> {
    let mut sums = vec![(0.0, 0usize); level_count];
    for r in ratings.iter().filter(|r| r.metric == metric) {
        let slot = sums
            .get_mut(r.level)
            .ok_or_else(|| Error::Config(format!("rating for level {} but only {level_count} levels", r.level)))?;
        slot.0 += r.rating;
        slot.1 += 1;
    }
    sums.iter()
        .enumerate()
        .map(|(level, &(s, n))| {
            if n == 0 {
                Err(Error::Config(format!("no {metric} ratings for level {level}")))
            } else {
                Ok(s / n as f64)
            }
        })
        .collect()
}

/// Highest mean is `most`, lowest is `least`, the rest `mid`. A tied
/// maximum goes to the lowest index; a tied minimum to the highest index
/// not already taken.
pub fn ratings_to_rankings(means: &[f64]) -> Result<Vec<RankLabel>> {
    if means.len() < 3 {
        return Err(Error::Argument(format!("need at least 3 levels to rank, got {}", means.len())));
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::Argument("mean ratings must be finite".into()));
    }
    let mut most = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[most] {
            most = i;
        }
    }
    let mut least = None::<usize>;
    for (i, &m) in means.iter().enumerate().rev() {
        if i != most && least.is_none_or(|l| m < means[l]) {
            least = Some(i);
        }
    }
    let least = least.expect("at least two candidates");
    Ok((0..means.len())
        .map(|i| match i {
            _ if i == most => RankLabel::Most,
            _ if i == least => RankLabel::Least,
            _ => RankLabel::Mid,
        })
        .collect())
}
