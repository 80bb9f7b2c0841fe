use std::fmt;
use std::str::FromStr;

use crate::error::Error;

pub const NUM_CLASSES: usize = 7;

/// The seven basic expressions, in the canonical (alphabetical) order used by
/// every vector and matrix in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Emotion {
    Angry,
    Disgusted,
    Fearful,
    Happy,
    Neutral,
    Sad,
    Surprised,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_CLASSES] = [
        Emotion::Angry,
        Emotion::Disgusted,
        Emotion::Fearful,
        Emotion::Happy,
        Emotion::Neutral,
        Emotion::Sad,
        Emotion::Surprised,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Emotion> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Angry => "Angry",
            Emotion::Disgusted => "Disgusted",
            Emotion::Fearful => "Fearful",
            Emotion::Happy => "Happy",
            Emotion::Neutral => "Neutral",
            Emotion::Sad => "Sad",
            Emotion::Surprised => "Surprised",
        }
    }

    /// Lowercase adjective form, as used in RaFD file names.
    pub fn adjective(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Disgusted => "disgusted",
            Emotion::Fearful => "fearful",
            Emotion::Happy => "happy",
            Emotion::Neutral => "neutral",
            Emotion::Sad => "sad",
            Emotion::Surprised => "surprised",
        }
    }

    /// Parses a label, accepting adjective and noun forms case-insensitively.
    /// Anything outside the seven basic expressions (e.g. "contemptuous" or a
    /// compound label) yields `None`.
    pub fn parse_label(label: &str) -> Option<Emotion> {
        let e = match label.trim().to_ascii_lowercase().as_str() {
            "angry" | "anger" => Emotion::Angry,
            "disgusted" | "disgust" => Emotion::Disgusted,
            "fearful" | "fear" | "afraid" => Emotion::Fearful,
            "happy" | "happiness" => Emotion::Happy,
            "neutral" => Emotion::Neutral,
            "sad" | "sadness" => Emotion::Sad,
            "surprised" | "surprise" => Emotion::Surprised,
            _ => return None,
        };
        Some(e)
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Emotion::parse_label(s)
            .ok_or_else(|| Error::InvalidInput(format!("not one of the 7 basic emotions: `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_alphabetical() {
        let names: Vec<_> = Emotion::ALL.iter().map(|e| e.name()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        for (i, e) in Emotion::ALL.iter().enumerate() {
            assert_eq!(e.index(), i);
            assert_eq!(Emotion::from_index(i), Some(*e));
        }
        assert_eq!(Emotion::from_index(7), None);
    }

    #[test]
    fn labels_parse_to_exactly_one_value_or_are_rejected() {
        for e in Emotion::ALL {
            assert_eq!(Emotion::parse_label(e.name()), Some(e));
            assert_eq!(Emotion::parse_label(e.adjective()), Some(e));
        }
        assert_eq!(Emotion::parse_label("SADNESS"), Some(Emotion::Sad));
        assert_eq!(Emotion::parse_label("contemptuous"), None);
        assert_eq!(Emotion::parse_label("happily_surprised"), None);
        assert!("".parse::<Emotion>().is_err());
    }
}
