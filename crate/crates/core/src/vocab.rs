//! Canonical vocabularies: object classes, action labels and relation kinds.
//!
//! The index of each variant is its slot in every one-hot encoding, weight
//! manifest and file format, so the orderings below must never change.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

macro_rules! vocabulary {
    (
        $(#[$meta:meta])*
        $name:ident, $kind:literal {
            $($variant:ident => $token:literal),+ $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub const COUNT: usize = Self::ALL.len();

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn token(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }

            pub fn tokens() -> Vec<&'static str> {
                Self::ALL.iter().map(|v| v.token()).collect()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                match s {
                    $($token => Ok($name::$variant),)+
                    _ => Err(Error::UnknownToken { kind: $kind, token: s.to_string(), line: None }),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.token())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

vocabulary! {
    /// The 12 manipulated object classes followed by the two hands.
    ObjectClass, "object class" {
        Cup => "cup",
        Bowl => "bowl",
        Whisk => "whisk",
        Bottle => "bottle",
        Banana => "banana",
        CuttingBoard => "cutting_board",
        Knife => "knife",
        Sponge => "sponge",
        Hammer => "hammer",
        Saw => "saw",
        Wood => "wood",
        Screwdriver => "screwdriver",
        LeftHand => "left_hand",
        RightHand => "right_hand",
    }
}

vocabulary! {
    /// Per-hand action classes.
    ActionLabel, "action" {
        Idle => "idle",
        Approach => "approach",
        Retreat => "retreat",
        Lift => "lift",
        Place => "place",
        Hold => "hold",
        Stir => "stir",
        Pour => "pour",
        Cut => "cut",
        Drink => "drink",
        Wipe => "wipe",
        Hammer => "hammer",
        Saw => "saw",
        Screw => "screw",
    }
}

vocabulary! {
    /// Spatial relations between an ordered pair of objects.
    RelationKind, "relation" {
        Contact => "contact",
        Above => "above",
        Below => "below",
        Left => "left",
        Right => "right",
        Front => "front",
        Behind => "behind",
        Inside => "inside",
        Surround => "surround",
        MovingTogether => "moving_together",
        HaltingTogether => "halting_together",
        FixedMovingTogether => "fixed_moving_together",
        GettingClose => "getting_close",
        MovingApart => "moving_apart",
        Stable => "stable",
    }
}

impl ObjectClass {
    pub fn is_hand(self) -> bool {
        matches!(self, ObjectClass::LeftHand | ObjectClass::RightHand)
    }

    /// Class seen from the opposite hand's perspective.
    pub fn mirrored(self) -> Self {
        match self {
            ObjectClass::LeftHand => ObjectClass::RightHand,
            ObjectClass::RightHand => ObjectClass::LeftHand,
            other => other,
        }
    }
}

impl ActionLabel {
    /// Classes whose samples are thinned during batch assembly.
    pub fn is_dominant(self) -> bool {
        matches!(self, ActionLabel::Idle | ActionLabel::Hold)
    }
}

/// Width of an edge attribute: 15 spatial slots plus the temporal slot.
pub const EDGE_WIDTH: usize = RelationKind::COUNT + 1;
/// Index of the temporal slot in an edge attribute.
pub const TEMPORAL_SLOT: usize = RelationKind::COUNT;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_match_the_encodings() {
        assert_eq!(ObjectClass::COUNT, 14);
        assert_eq!(ActionLabel::COUNT, 14);
        assert_eq!(RelationKind::COUNT, 15);
        assert_eq!(EDGE_WIDTH, 16);
    }

    #[test]
    fn tokens_round_trip() {
        for c in ObjectClass::ALL {
            assert_eq!(c.token().parse::<ObjectClass>().unwrap(), *c);
        }
        for a in ActionLabel::ALL {
            assert_eq!(a.token().parse::<ActionLabel>().unwrap(), *a);
        }
        for r in RelationKind::ALL {
            assert_eq!(r.token().parse::<RelationKind>().unwrap(), *r);
        }
    }

    #[test]
    fn unknown_token_names_the_token() {
        let err = "jump".parse::<ActionLabel>().unwrap_err();
        assert!(err.to_string().contains("\"jump\""));
    }

    #[test]
    fn mirroring_classes() {
        assert_eq!(ObjectClass::RightHand.mirrored(), ObjectClass::LeftHand);
        assert_eq!(ObjectClass::Cup.mirrored(), ObjectClass::Cup);
    }
}
