//! Scene grammar understood by the mock engine and its procedural renderer.
//!
//! Grammar (case-insensitive, punctuation ignored):
//!
//! ```text
//! [a|an] [<color>] <noun> [on a <color> background] [on the <position>]
//! noun := circle | square | triangle | shape | something | object | thing
//! ```
//!
//! A generic noun leaves the shape open; a missing color leaves that color
//! open; a missing position means the center. Open attributes are filled
//! per guide by the mock engine and from the prompt hash by [`parse_prompt`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::pixels::ImagePixels;

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                Self::ALL.iter().copied().find(|v| v.as_str() == s).ok_or(())
            }
        }
    };
}

named_enum!(Shape {
    Circle => "circle",
    Square => "square",
    Triangle => "triangle",
});

named_enum!(Color {
    Black => "black",
    White => "white",
    Red => "red",
    Green => "green",
    Blue => "blue",
    Yellow => "yellow",
    Cyan => "cyan",
    Magenta => "magenta",
});

named_enum!(Position {
    Left => "left",
    Center => "center",
    Right => "right",
});

impl Color {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Black => [0, 0, 0],
            Color::White => [255, 255, 255],
            Color::Red => [255, 0, 0],
            Color::Green => [0, 255, 0],
            Color::Blue => [0, 0, 255],
            Color::Yellow => [255, 255, 0],
            Color::Cyan => [0, 255, 255],
            Color::Magenta => [255, 0, 255],
        }
    }
}

impl Position {
    fn center_x(self) -> f64 {
        match self {
            Position::Left => 0.25,
            Position::Center => 0.5,
            Position::Right => 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub shape_color: Color,
    pub background: Color,
    pub position: Position,
}

impl SceneSpec {
    /// Every valid scene (shape color differs from background).
    pub fn all() -> Vec<SceneSpec> {
        let mut out = Vec::new();
        for &shape in Shape::ALL {
            for &shape_color in Color::ALL {
                for &background in Color::ALL {
                    if shape_color == background {
                        continue;
                    }
                    for &position in Position::ALL {
                        out.push(SceneSpec {
                            shape,
                            shape_color,
                            background,
                            position,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn prompt(&self) -> String {
        format!(
            "a {} {} on a {} background on the {}",
            self.shape_color, self.shape, self.background, self.position
        )
    }
}

/// A parsed prompt; `None` marks an attribute the prompt leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScenePattern {
    pub shape: Option<Shape>,
    pub shape_color: Option<Color>,
    pub background: Option<Color>,
    pub position: Option<Position>,
}

impl ScenePattern {
    pub fn matches(&self, scene: &SceneSpec) -> bool {
        self.shape.map_or(true, |s| s == scene.shape)
            && self.shape_color.map_or(true, |c| c == scene.shape_color)
            && self.background.map_or(true, |c| c == scene.background)
            && self.position.map_or(true, |p| p == scene.position)
    }

    pub fn constrained(&self) -> usize {
        usize::from(self.shape.is_some())
            + usize::from(self.shape_color.is_some())
            + usize::from(self.background.is_some())
            + usize::from(self.position.is_some())
    }

    /// Fills open attributes from `rng`; an open position becomes center.
    pub fn fill(&self, rng: &mut impl Rng) -> SceneSpec {
        let shape = self
            .shape
            .unwrap_or_else(|| Shape::ALL[rng.gen_range(0..Shape::ALL.len())]);
        let (shape_color, background) = match (self.shape_color, self.background) {
            (Some(c), Some(b)) => (c, b),
            (Some(c), None) => (c, other_color(c, rng.gen_range(0..7))),
            (None, Some(b)) => (other_color(b, rng.gen_range(0..7)), b),
            (None, None) => {
                let c = Color::ALL[rng.gen_range(0..8)];
                (c, other_color(c, rng.gen_range(0..7)))
            }
        };
        SceneSpec {
            shape,
            shape_color,
            background,
            position: self.position.unwrap_or(Position::Center),
        }
    }
}

/// The `nth` (0..7) palette color skipping `taken`.
fn other_color(taken: Color, nth: usize) -> Color {
    Color::ALL
        .iter()
        .copied()
        .filter(|&c| c != taken)
        .nth(nth)
        .expect("seven other colors")
}

/// Parses the grammar; `None` if the prompt does not follow it or asks for a
/// shape in the background color.
pub fn parse_pattern(prompt: &str) -> Option<ScenePattern> {
    let cleaned: String = prompt
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    let mut rest = words.as_slice();
    let mut pat = ScenePattern::default();

    if let [first, tail @ ..] = rest {
        if *first == "a" || *first == "an" {
            rest = tail;
        }
    }
    if let [word, tail @ ..] = rest {
        if let Ok(c) = word.parse::<Color>() {
            pat.shape_color = Some(c);
            rest = tail;
        }
    }
    match rest {
        [noun, tail @ ..] => {
            if let Ok(s) = noun.parse::<Shape>() {
                pat.shape = Some(s);
            } else if !matches!(*noun, "shape" | "something" | "object" | "thing") {
                return None;
            }
            rest = tail;
        }
        [] => return None,
    }
    if let ["on", "a" | "an", color, "background", tail @ ..] = rest {
        pat.background = Some(color.parse().ok()?);
        rest = tail;
    }
    if let ["on", "the", place, tail @ ..] = rest {
        pat.position = Some(match *place {
            "middle" | "centre" => Position::Center,
            other => other.parse().ok()?,
        });
        rest = tail;
    }
    if !rest.is_empty() {
        return None;
    }
    if pat.shape_color.is_some() && pat.shape_color == pat.background {
        return None;
    }
    Some(pat)
}

/// Stable scene for a prompt. Open or unparseable attributes are derived from
/// the xxh3-64 hash `h` of the lowercased, whitespace-normalized prompt:
/// shape `h % 3`, shape color `(h / 3) % 8`, background the `(h / 24) % 7`-th
/// remaining color, position `(h / 168) % 3`. A parsed prompt that names no
/// position keeps the center.
pub fn parse_prompt(prompt: &str) -> SceneSpec {
    let normalized = prompt
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let h = xxh3_64(normalized.as_bytes());
    let hashed = SceneSpec {
        shape: Shape::ALL[(h % 3) as usize],
        shape_color: Color::ALL[((h / 3) % 8) as usize],
        background: other_color(Color::ALL[((h / 3) % 8) as usize], ((h / 24) % 7) as usize),
        position: Position::ALL[((h / 168) % 3) as usize],
    };
    let Some(pat) = parse_pattern(prompt) else {
        return hashed;
    };
    let shape_color = pat.shape_color.unwrap_or(
        // keep the hashed color unless it collides with a given background
        match pat.background {
            Some(b) if b == hashed.shape_color => other_color(b, ((h / 24) % 7) as usize),
            _ => hashed.shape_color,
        },
    );
    let background = pat.background.unwrap_or(if hashed.background == shape_color {
        other_color(shape_color, ((h / 24) % 7) as usize)
    } else {
        hashed.background
    });
    SceneSpec {
        shape: pat.shape.unwrap_or(hashed.shape),
        shape_color,
        background,
        position: pat.position.unwrap_or(Position::Center),
    }
}

fn jitter(base: [u8; 3], noise: [i16; 3]) -> [u8; 3] {
    let mut out = [0u8; 3];
    for i in 0..3 {
        out[i] = (i16::from(base[i]) + noise[i]).clamp(0, 255) as u8;
    }
    out
}

/// Renders `scene` as a `side`x`side` raster. The seed drives the shape size
/// (30-50% of the frame side), the center offset (up to 5% of the frame on
/// each axis) and a per-channel color offset of up to 5 for shape and
/// background.
pub fn mock_render(scene: &SceneSpec, seed: u64, side: u32) -> ImagePixels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size: f64 = rng.gen_range(0.30..=0.50);
    let cx = scene.position.center_x() + rng.gen_range(-0.05..=0.05);
    let cy = 0.5 + rng.gen_range(-0.05..=0.05);
    let mut noise = || [0; 3].map(|_: i16| rng.gen_range(-5i16..=5));
    let fg = jitter(scene.shape_color.rgb(), noise());
    let bg = jitter(scene.background.rgb(), noise());
    let half = size / 2.0;
    let top = cy - half;
    let side_f = f64::from(side);
    ImagePixels::from_fn(side, side, |x, y| {
        let u = (f64::from(x) + 0.5) / side_f;
        let v = (f64::from(y) + 0.5) / side_f;
        let (du, dv) = (u - cx, v - cy);
        let inside = match scene.shape {
            Shape::Circle => du * du + dv * dv <= half * half,
            Shape::Square => du.abs() <= half && dv.abs() <= half,
            Shape::Triangle => dv.abs() <= half && du.abs() <= (v - top) / 2.0,
        };
        if inside {
            fg
        } else {
            bg
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedders::color_histogram64;

    fn scene(shape: Shape, c: Color, b: Color, p: Position) -> SceneSpec {
        SceneSpec {
            shape,
            shape_color: c,
            background: b,
            position: p,
        }
    }

    #[test]
    fn grammar_examples() {
        assert_eq!(
            parse_prompt("a red circle on a blue background"),
            scene(Shape::Circle, Color::Red, Color::Blue, Position::Center)
        );
        assert_eq!(
            parse_prompt("A GREEN SQUARE on a white background on the left"),
            scene(Shape::Square, Color::Green, Color::White, Position::Left)
        );
        for s in SceneSpec::all().iter().step_by(17) {
            assert_eq!(parse_prompt(&s.prompt()), *s);
        }
    }

    #[test]
    fn partial_patterns() {
        let p = parse_pattern("something on a blue background").unwrap();
        assert_eq!(p.background, Some(Color::Blue));
        assert_eq!(p.constrained(), 1);
        let p = parse_pattern("a red shape").unwrap();
        assert_eq!((p.shape_color, p.shape), (Some(Color::Red), None));
        assert!(parse_pattern("a red circle on a red background").is_none());
        assert!(parse_pattern("quantum entangled teapot").is_none());
        assert!(parse_pattern("").is_none());
    }

    #[test]
    fn unparseable_prompt_uses_documented_hash() {
        let prompt = "quantum entangled teapot";
        let h = xxh3_64(prompt.as_bytes());
        let color = Color::ALL[((h / 3) % 8) as usize];
        let others: Vec<Color> = Color::ALL.iter().copied().filter(|&c| c != color).collect();
        let expect = scene(
            Shape::ALL[(h % 3) as usize],
            color,
            others[((h / 24) % 7) as usize],
            Position::ALL[((h / 168) % 3) as usize],
        );
        assert_eq!(parse_prompt(prompt), expect);
        assert_eq!(parse_prompt("  Quantum   entangled TEAPOT "), expect);
    }

    #[test]
    fn render_is_deterministic_and_sized() {
        let s = scene(Shape::Triangle, Color::Yellow, Color::Blue, Position::Right);
        assert_eq!(mock_render(&s, 5, 64), mock_render(&s, 5, 64));
        let small = mock_render(&s, 5, 256);
        assert_eq!((small.width(), small.height()), (256, 256));
    }

    #[test]
    fn seeds_differ_but_keep_dominant_colors() {
        for s in SceneSpec::all().iter().step_by(7) {
            let a = mock_render(s, 1, 128);
            let b = mock_render(s, 2, 128);
            assert_ne!(a, b);
            let (ha, hb) = (color_histogram64(&a), color_histogram64(&b));
            let l1: f32 = ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum();
            assert!(l1 < 0.3, "{s:?}: {l1}");
        }
    }

    #[test]
    fn shape_area_within_bounds() {
        let side = 200u32;
        for seed in 0..20 {
            let s = scene(Shape::Square, Color::White, Color::Black, Position::Center);
            let img = mock_render(&s, seed, side);
            let lit = img.pixels().filter(|p| p[0] > 128).count() as f64;
            let frac = lit.sqrt() / f64::from(side);
            assert!((0.29..=0.51).contains(&frac), "{frac}");
        }
    }
}
