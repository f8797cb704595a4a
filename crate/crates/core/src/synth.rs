//! Procedural glyphs and synthetic text lines for training and tests.
//!
//! Each character gets a 24x16 binary glyph drawn from a few random thick
//! strokes between grid anchors. Lines place glyphs left to right with a
//! random gap before each one, a small vertical offset, and
//! salt-and-pepper noise. Everything follows from the seeds.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::alphabet::Alphabet;
use crate::error::{Error, Result};
use crate::textline::{encode_pgm, format_manifest, GrayImage};

pub const GLYPH_HEIGHT: usize = 24;
pub const GLYPH_WIDTH: usize = 16;
/// Height of rendered lines; glyphs sit centred in it.
pub const LINE_HEIGHT: usize = 32;
/// Minimum Hamming distance between any two glyphs of a set.
pub const MIN_GLYPH_DISTANCE: usize = 24;
pub const MANIFEST_NAME: &str = "manifest.tsv";

const INK: f64 = 0.0;
const PAPER: f64 = 1.0;
const ANCHORS_X: [usize; 3] = [2, 7, 12];
const ANCHORS_Y: [usize; 5] = [2, 7, 11, 15, 20];
const MAX_ATTEMPTS: usize = 10_000;

/// Rendering perturbations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    /// Gap before each glyph is drawn from `0..=max_spacing` pixels.
    pub max_spacing: usize,
    /// Vertical offset is drawn from `-max_offset..=max_offset`.
    pub max_offset: usize,
    /// Probability that a pixel is replaced by a random black or white one.
    pub noise: f64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        max_spacing: 0,
        max_offset: 0,
        noise: 0.0,
    };
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            max_spacing: 4,
            max_offset: 2,
            noise: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlyphSet {
    alphabet: Alphabet,
    glyphs: Vec<Vec<bool>>,
    jitter: Jitter,
}

impl GlyphSet {
    /// Draws one glyph per alphabet character from `seed`, with default
    /// jitter.
    pub fn generate(alphabet: Alphabet, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glyphs: Vec<Vec<bool>> = Vec::with_capacity(alphabet.len());
        for &c in alphabet.chars() {
            let mut attempts = 0;
            let glyph = loop {
                attempts += 1;
                if attempts > MAX_ATTEMPTS {
                    return Err(Error::invalid(format!("could not draw a distinct glyph for {c:?}")));
                }
                let g = random_glyph(&mut rng);
                if glyphs.iter().all(|o| hamming(o, &g) >= MIN_GLYPH_DISTANCE) {
                    break g;
                }
            };
            glyphs.push(glyph);
        }
        Ok(GlyphSet {
            alphabet,
            glyphs,
            jitter: Jitter::default(),
        })
    }

    pub fn with_jitter(mut self, jitter: Jitter) -> Result<Self> {
        if !(0.0..=1.0).contains(&jitter.noise) {
            return Err(Error::invalid(format!("noise probability {} outside [0,1]", jitter.noise)));
        }
        if 2 * jitter.max_offset > LINE_HEIGHT - GLYPH_HEIGHT {
            return Err(Error::invalid(format!(
                "vertical offset {} does not fit in the line",
                jitter.max_offset
            )));
        }
        self.jitter = jitter;
        Ok(self)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn jitter(&self) -> Jitter {
        self.jitter
    }

    /// Row-major 24x16 bitmap of `c`; `true` is ink.
    pub fn glyph(&self, c: char) -> Option<&[bool]> {
        let label = self.alphabet.label_of(c)?;
        Some(&self.glyphs[label - 1])
    }
}

fn random_glyph(rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut g = vec![false; GLYPH_HEIGHT * GLYPH_WIDTH];
    let strokes = rng.gen_range(2..=4);
    for _ in 0..strokes {
        let (x0, y0) = (ANCHORS_X[rng.gen_range(0..3)], ANCHORS_Y[rng.gen_range(0..5)]);
        let (x1, y1) = loop {
            let p = (ANCHORS_X[rng.gen_range(0..3)], ANCHORS_Y[rng.gen_range(0..5)]);
            if p != (x0, y0) {
                break p;
            }
        };
        let steps = x0.abs_diff(x1).max(y0.abs_diff(y1));
        for i in 0..=steps {
            let f = i as f64 / steps as f64;
            let x = (x0 as f64 + f * (x1 as f64 - x0 as f64)).round() as usize;
            let y = (y0 as f64 + f * (y1 as f64 - y0 as f64)).round() as usize;
            // two pixels thick
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                g[(y + dy) * GLYPH_WIDTH + x + dx] = true;
            }
        }
    }
    g
}

fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Renders `text` as a 32-pixel-high line, dark ink on white. Returns the
/// image and the transcript.
pub fn render_line(glyphs: &GlyphSet, text: &str, seed: u64) -> Result<(GrayImage, String)> {
    let bitmaps = text
        .chars()
        .map(|c| glyphs.glyph(c).ok_or(Error::UnknownSymbol(c)))
        .collect::<Result<Vec<_>>>()?;
    if bitmaps.is_empty() {
        return Err(Error::invalid("cannot render an empty line"));
    }
    let jitter = glyphs.jitter;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placements: Vec<(usize, usize)> = bitmaps
        .iter()
        .map(|_| {
            let gap = rng.gen_range(0..=jitter.max_spacing);
            let offset = rng.gen_range(0..=2 * jitter.max_offset);
            (gap, offset)
        })
        .collect();
    let width: usize = placements.iter().map(|(gap, _)| gap + GLYPH_WIDTH).sum();
    let mut img = GrayImage::filled(width, LINE_HEIGHT, PAPER);
    let base_top = (LINE_HEIGHT - GLYPH_HEIGHT) / 2 - jitter.max_offset;
    let mut left = 0;
    for (bitmap, &(gap, offset)) in bitmaps.iter().zip(&placements) {
        left += gap;
        let top = base_top + offset;
        for y in 0..GLYPH_HEIGHT {
            for x in 0..GLYPH_WIDTH {
                if bitmap[y * GLYPH_WIDTH + x] {
                    img.set(left + x, top + y, INK);
                }
            }
        }
        left += GLYPH_WIDTH;
    }
    if jitter.noise > 0.0 {
        for y in 0..LINE_HEIGHT {
            for x in 0..width {
                if rng.gen_bool(jitter.noise) {
                    img.set(x, y, if rng.gen_bool(0.5) { INK } else { PAPER });
                }
            }
        }
    }
    Ok((img, text.to_string()))
}

/// Draws `count` transcripts with lengths uniform in `length_range`
/// (inclusive) and characters uniform over the alphabet, each paired with
/// its render seed.
pub fn sample_transcripts(
    alphabet: &Alphabet,
    count: usize,
    length_range: (usize, usize),
    seed: u64,
) -> Result<Vec<(String, u64)>> {
    let (min, max) = length_range;
    if min == 0 || min > max {
        return Err(Error::invalid(format!("bad length range {min}..={max}")));
    }
    let chars = alphabet.chars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let len = rng.gen_range(min..=max);
            let text: String = (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect();
            (text, rng.gen())
        })
        .collect())
}

/// Writes `count` PGM lines and a TSV manifest (relative paths) into
/// `out_dir`, returning the manifest path.
pub fn generate_dataset(
    glyphs: &GlyphSet,
    count: usize,
    length_range: (usize, usize),
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let lines = sample_transcripts(&glyphs.alphabet, count, length_range, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let names: Vec<String> = (0..count).map(|i| format!("line_{i:06}.pgm")).collect();
    lines
        .par_iter()
        .zip(&names)
        .try_for_each(|((text, render_seed), name)| -> Result<()> {
            let (img, _) = render_line(glyphs, text, *render_seed)?;
            let path = out_dir.join(name);
            fs::write(&path, encode_pgm(&img)).map_err(|e| Error::io(path, e))
        })?;
    let manifest = format_manifest(names.iter().map(String::as_str).zip(lines.iter().map(|(t, _)| t.as_str())));
    let path = out_dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn six() -> GlyphSet {
        GlyphSet::generate(Alphabet::new("abcdef".chars()).unwrap(), 3).unwrap()
    }

    #[test]
    fn glyphs_are_distinct_and_reproducible() {
        let g = six();
        assert_eq!(g, six());
        let chars = g.alphabet().chars().to_vec();
        for (i, &a) in chars.iter().enumerate() {
            for &b in &chars[i + 1..] {
                assert!(hamming(g.glyph(a).unwrap(), g.glyph(b).unwrap()) >= 10);
            }
        }
        let big = GlyphSet::generate(Alphabet::new("0123456789abcdefghijklmnopqrstuvwxyz".chars()).unwrap(), 1);
        assert!(big.is_ok());
    }

    #[test]
    fn rendering_is_seeded() {
        let g = six();
        let a = render_line(&g, "ab", 7).unwrap();
        let b = render_line(&g, "ab", 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1, "ab");
        assert_ne!(render_line(&g, "ab", 8).unwrap().0, a.0);
    }

    #[test]
    fn width_stays_within_construction_bounds() {
        let g = six();
        for seed in 0..50 {
            for n in 1..=6 {
                let text: String = "abcdef".chars().cycle().skip(seed as usize).take(n).collect();
                let (img, _) = render_line(&g, &text, seed).unwrap();
                assert!(img.width() >= n * 16 && img.width() <= n * 20);
                assert_eq!(img.height(), 32);
            }
        }
    }

    #[test]
    fn undisturbed_glyph_is_centred() {
        let g = six().with_jitter(Jitter::NONE).unwrap();
        let (img, _) = render_line(&g, "a", 11).unwrap();
        assert_eq!((img.width(), img.height()), (16, 32));
        let bitmap = g.glyph('a').unwrap();
        for y in 0..32 {
            for x in 0..16 {
                let ink = (4..28).contains(&y) && bitmap[(y - 4) * 16 + x];
                assert_eq!(img.get(x, y), if ink { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn unknown_characters_are_rejected() {
        assert!(matches!(render_line(&six(), "abz", 0), Err(Error::UnknownSymbol('z'))));
        assert!(six().with_jitter(Jitter { max_offset: 5, ..Jitter::NONE }).is_err());
    }

    #[test]
    fn transcripts_respect_the_length_range() {
        let a = Alphabet::new("xy".chars()).unwrap();
        let t = sample_transcripts(&a, 500, (2, 4), 1).unwrap();
        assert!(t.iter().all(|(s, _)| (2..=4).contains(&s.chars().count())));
        assert!(sample_transcripts(&a, 1, (0, 3), 1).is_err());
        assert!(sample_transcripts(&a, 1, (4, 3), 1).is_err());
    }
}
