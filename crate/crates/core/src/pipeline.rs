//! Directory-level loaders that turn corpora on disk into datasets.

use std::path::Path;

use crate::dataset::{assemble_dataset, Dataset, WindowOptions};
use crate::error::{Error, Result};
use crate::fsutil::read_text;
use crate::labels::{mean_ratings, parse_ratings, ratings_to_rankings, LabelTable, Metric, RankLabel};
use crate::levels::{load_level_dir, Corpus, LevelGrid, Palette, RemapTable};
use crate::logs::{crop_and_stack, encode_session, import_sessions, synthesize_empty_logs, EventSchema, Kinematics, SESSION_TICKS};
use crate::rng::derive;

/// Where a played corpus lives: level text files, session logs with a
/// `manifest.txt`, and a labels file.
#[derive(Debug, Clone, Copy)]
pub struct PlayedCorpus<'a> {
    pub levels_dir: &'a Path,
    pub logs_dir: &'a Path,
    pub labels: &'a Path,
}

/// Infinite Mario style corpus: levels cropped to 198×10, sessions cropped
/// to 904 ticks and stacked in manifest order, labelled for `metric`.
pub fn load_played(
    corpus: &PlayedCorpus<'_>,
    metric: Metric,
    palette: &Palette,
    kinematics: &Kinematics,
) -> Result<Dataset> {
    let grids = load_level_dir(corpus.levels_dir, palette, None, Some(&Corpus::InfiniteMario.crop()))?;
    if grids.is_empty() {
        return Err(Error::Config(format!("no level files in {}", corpus.levels_dir.display())));
    }
    let schema = EventSchema::infinite_mario();
    let raw = import_sessions(corpus.logs_dir, &corpus.logs_dir.join("manifest.txt"), &schema)?;
    let sessions = raw
        .iter()
        .map(|s| {
            let grid = grids.get(s.level_index).ok_or_else(|| Error::Session {
                session: s.label(),
                message: format!("level {} has no level file", s.level_index),
            })?;
            encode_session(s, &schema, kinematics, grid.width)
        })
        .collect::<Result<Vec<_>>>()?;
    let logs = crop_and_stack(&sessions, SESSION_TICKS)?;
    let labels = LabelTable::parse(&read_text(corpus.labels)?)?.session_labels(&logs.spans, metric)?;
    assemble_dataset(logs, grids, labels, WindowOptions::default())
}

/// Foreign levels, cropped and remapped into the palette, in file-name order.
pub fn load_foreign_levels(dir: &Path, corpus: Corpus, palette: &Palette, remap: &RemapTable) -> Result<Vec<LevelGrid>> {
    let grids = load_level_dir(dir, palette, Some(remap), Some(&corpus.crop()))?;
    if grids.is_empty() {
        return Err(Error::Config(format!("no level files in {}", dir.display())));
    }
    Ok(grids)
}

/// One point per tile column of every level, over synthesized empty logs.
pub fn empty_log_dataset(grids: Vec<LevelGrid>, labels: Vec<RankLabel>, seed: u64) -> Result<Dataset> {
    let widths: Vec<usize> = grids.iter().map(|g| g.width).collect();
    let logs = synthesize_empty_logs(&widths, &mut derive(seed, &[0x656d_7074]));
    assemble_dataset(
        logs,
        grids,
        labels,
        WindowOptions {
            pad_start: true,
            ..WindowOptions::default()
        },
    )
}

/// Levels labelled from mean questionnaire ratings for `metric`.
pub fn rated_dataset(grids: Vec<LevelGrid>, ratings_path: &Path, metric: Metric, seed: u64) -> Result<Dataset> {
    let ratings = parse_ratings(&read_text(ratings_path)?)?;
    let labels = ratings_to_rankings(&mean_ratings(&ratings, metric, grids.len())?)?;
    empty_log_dataset(grids, labels, seed)
}

/// Levels in play order with no labels; every point carries `mid`.
pub fn ordered_dataset(grids: Vec<LevelGrid>, seed: u64) -> Result<Dataset> {
    let n = grids.len();
    empty_log_dataset(grids, vec![RankLabel::Mid; n], seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, generate_gwario, generate_smb, label_for, SynthSpec};

    #[test]
    fn synthetic_corpus_loads_with_expected_counts() {
        let dir = tempfile::tempdir().unwrap();
        generate(&SynthSpec::new(6, 2, 5)).unwrap().write_to(dir.path()).unwrap();
        let corpus = PlayedCorpus {
            levels_dir: &dir.path().join("levels"),
            logs_dir: &dir.path().join("logs"),
            labels: &dir.path().join("labels.tsv"),
        };
        let d = load_played(&corpus, Metric::Fun, &Palette::infinite_mario(), &Kinematics::default()).unwrap();
        assert_eq!(d.len(), 904 * 6 - 9);
        let counts = d.label_counts();
        assert_eq!(counts.iter().sum::<usize>(), d.len());
        assert!(counts.iter().all(|&c| c == 904 * 2 || c == 904 * 2 - 9), "{counts:?}");
        for i in (0..d.len()).step_by(97) {
            let span = &d.spans()[d.session_of(i)];
            assert_eq!(d.label(i), label_for(span.level, Metric::Fun));
        }
    }

    #[test]
    fn foreign_corpora_give_one_point_per_column() {
        let palette = Palette::infinite_mario();
        let dir = tempfile::tempdir().unwrap();
        generate_gwario(1).write_to(&dir.path().join("gw")).unwrap();
        generate_smb(1).write_to(&dir.path().join("smb")).unwrap();
        let gw_remap = RemapTable::parse(include_str!("../../../configs/gwario.remap"), &palette).unwrap();
        let grids = load_foreign_levels(&dir.path().join("gw/levels"), Corpus::Gwario, &palette, &gw_remap).unwrap();
        let d = rated_dataset(grids, &dir.path().join("gw/ratings.tsv"), Metric::Fun, 0).unwrap();
        assert_eq!(d.len(), 688);
        assert_eq!(d.label_counts(), [172, 344, 172]);
        let smb_remap = RemapTable::parse(include_str!("../../../configs/smb.remap"), &palette).unwrap();
        let grids = load_foreign_levels(&dir.path().join("smb/levels"), Corpus::Smb, &palette, &smb_remap).unwrap();
        let d = ordered_dataset(grids, 0).unwrap();
        assert_eq!(d.len(), 15 * 150);
        assert_eq!(d.spans().len(), 15);
    }
}
