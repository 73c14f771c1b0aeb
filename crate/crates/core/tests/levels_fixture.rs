use affect_forge::levels::{extract_chunk, parse_level, Palette, CHUNK_SIZE, TILE_CHANNELS};

const FIXTURE: &str = include_str!("fixtures/level.txt");

#[test]
fn tile_counts_match_character_counts() {
    let palette = Palette::infinite_mario();
    let grid = parse_level(FIXTURE, &palette, 0).unwrap();
    assert_eq!((grid.width, grid.height), (32, 10));
    let counts = grid.tile_counts();
    for (id, tile) in palette.tiles().iter().enumerate() {
        let expected = FIXTURE.chars().filter(|&c| c == tile.ch).count();
        assert_eq!(counts[id], expected, "{}", tile.name);
    }
    assert_eq!(counts.iter().sum::<usize>(), 320);
}

#[test]
fn one_hot_has_a_single_one_per_cell() {
    let grid = parse_level(FIXTURE, &Palette::infinite_mario(), 0).unwrap();
    let hot = grid.to_one_hot();
    assert_eq!(hot.shape(), &[10, 32, TILE_CHANNELS]);
    for cell in hot.data().chunks_exact(TILE_CHANNELS) {
        assert_eq!(cell.iter().sum::<f64>(), 1.0);
    }
}

#[test]
fn chunk_rows_are_fixture_substrings() {
    let palette = Palette::infinite_mario();
    let grid = parse_level(FIXTURE, &palette, 0).unwrap();
    let lines: Vec<&str> = FIXTURE.lines().collect();
    for x in [0.0, 3.2, 15.9, 31.0] {
        let chunk = extract_chunk(&grid, x).unwrap();
        let start = (x as usize).saturating_sub(4).min(32 - CHUNK_SIZE);
        for (y, line) in lines.iter().enumerate() {
            let row: String = (0..CHUNK_SIZE)
                .map(|dx| {
                    let cell = &chunk.data()[(y * CHUNK_SIZE + dx) * TILE_CHANNELS..][..TILE_CHANNELS];
                    palette.tile(cell.iter().position(|&v| v == 1.0).unwrap() as u8).ch
                })
                .collect();
            assert_eq!(row, line[start..start + CHUNK_SIZE], "x={x} y={y}");
        }
    }
}
