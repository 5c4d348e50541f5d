use serde::{Deserialize, Serialize};

use super::record::Platform;

pub const SCALE_MIN: u32 = 800;
pub const SCALE_MAX: u32 = 3500;

/// A native difficulty value: a numeric rating or a platform label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NativeDifficulty {
    Rating(u32),
    Label(String),
}

/// Normalized difficulty on the 800..=3500 scale, `lo ≤ hi`.
/// Open-ended bands run up to 3500.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyBand {
    pub lo: u32,
    pub hi: u32,
}

impl DifficultyBand {
    pub fn exact(v: u32) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn midpoint(self) -> u32 {
        (self.lo + self.hi) / 2
    }

    /// Value compared against difficulty floors.
    pub fn floor_key(self) -> u32 {
        self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot map {platform} difficulty {value:?}")]
pub struct Unmappable {
    pub platform: Platform,
    pub value: NativeDifficulty,
}

fn band(lo: u32, hi: u32) -> DifficultyBand {
    DifficultyBand { lo, hi }
}

fn normalize_label(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_uppercase()
}

/// Map a native difficulty onto the Codeforces rating scale.
pub fn map_difficulty(platform: Platform, native: &NativeDifficulty) -> Result<DifficultyBand, Unmappable> {
    let fail = || Unmappable {
        platform,
        value: native.clone(),
    };
    match (platform, native) {
        (Platform::AtCoder, NativeDifficulty::Label(l)) => match normalize_label(l).as_str() {
            "ABCA" | "ABCB" => Ok(DifficultyBand::exact(800)),
            "ABCC" => Ok(band(900, 1100)),
            "ABCD" => Ok(band(1200, 1300)),
            "ABCE" => Ok(band(1400, 1600)),
            "ABCF" => Ok(band(1700, 1900)),
            "ABCG" | "ARC" | "AGC" => Ok(band(1900, SCALE_MAX)),
            _ if normalize_label(l).starts_with("ARC") || normalize_label(l).starts_with("AGC") => {
                Ok(band(1900, SCALE_MAX))
            }
            _ => Err(fail()),
        },
        (Platform::LeetCode, NativeDifficulty::Label(l)) => match normalize_label(l).as_str() {
            "EASY" => Ok(band(800, 900)),
            "MEDIUM" => Ok(band(1000, 1600)),
            "HARD" => Ok(band(1500, SCALE_MAX)),
            _ => Err(fail()),
        },
        // Codeforces ratings pass through; other sources are accepted only
        // when already expressed on the same scale.
        (_, NativeDifficulty::Rating(r)) if platform != Platform::LeetCode && (SCALE_MIN..=SCALE_MAX).contains(r) => {
            Ok(DifficultyBand::exact(*r))
        }
        _ => Err(fail()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(s: &str) -> NativeDifficulty {
        NativeDifficulty::Label(s.into())
    }

    #[test]
    fn table_bands() {
        assert_eq!(map_difficulty(Platform::AtCoder, &label("ABC-D")).unwrap(), band(1200, 1300));
        assert_eq!(map_difficulty(Platform::AtCoder, &label("abc a")).unwrap(), band(800, 800));
        assert_eq!(map_difficulty(Platform::AtCoder, &label("AGC")).unwrap(), band(1900, 3500));
        assert_eq!(map_difficulty(Platform::LeetCode, &label("Hard")).unwrap(), band(1500, 3500));
        assert_eq!(map_difficulty(Platform::LeetCode, &label("Easy")).unwrap(), band(800, 900));
        assert_eq!(
            map_difficulty(Platform::Codeforces, &NativeDifficulty::Rating(1900)).unwrap(),
            DifficultyBand::exact(1900)
        );
    }

    #[test]
    fn unmappable_values() {
        assert!(map_difficulty(Platform::Codeforces, &NativeDifficulty::Rating(4000)).is_err());
        assert!(map_difficulty(Platform::Codeforces, &label("Hard")).is_err());
        assert!(map_difficulty(Platform::LeetCode, &NativeDifficulty::Rating(1500)).is_err());
        assert!(map_difficulty(Platform::AtCoder, &label("ABC-Z")).is_err());
    }

    #[test]
    fn band_helpers() {
        assert_eq!(band(1200, 1300).midpoint(), 1250);
        assert_eq!(band(1500, 3500).floor_key(), 3500);
    }
}
