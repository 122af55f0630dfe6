use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Declares a closed categorical enum with stable text labels.
macro_rules! categorical {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn labels() -> Vec<&'static str> {
                Self::ALL.iter().map(|v| v.label()).collect()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                let t = s.trim();
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.label().eq_ignore_ascii_case(t))
                    .ok_or_else(|| {
                        format!("unknown value `{t}`, expected one of {:?}", Self::labels())
                    })
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.label())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

categorical!(Direction { North => "N", South => "S", West => "W", East => "E" });

categorical!(CountyRegion {
    NorthEast => "NE",
    NorthWest => "NW",
    Central => "Central",
    SouthEast => "SE",
    SouthWest => "SW",
});

categorical!(EventType {
    Crash1 => "crash1",
    Crash2 => "crash2",
    Crash3 => "crash3",
    Debris => "debris",
});

categorical!(
    /// Vehicle and truck counts are bucketed as 0, 1, 2 and "3 or more".
    CountBucket { Zero => "0", One => "1", Two => "2", ThreePlus => "3+" }
);

categorical!(DetectionMethod {
    Police => "police",
    HighwayHelper => "highway_helper",
    Automated => "automated",
    Dot => "dot",
    Cameras => "cameras",
    Other => "other",
});

categorical!(Responder {
    Police => "police",
    Tow => "tow",
    Dot => "dot",
    Dps => "dps",
    Ems => "ems",
    HighwayHelper => "hh",
});

categorical!(Terrain { Flat => "flat", Rolly => "rolly", Hilly => "hilly" });

categorical!(TimeOfDay {
    Morning => "morning",
    EarlyAfternoon => "early_afternoon",
    Afternoon => "afternoon",
    EveningRush => "evening_rush",
    Evening => "evening",
    Night => "night",
});

impl CountBucket {
    pub fn from_count(n: u32) -> Self {
        match n {
            0 => CountBucket::Zero,
            1 => CountBucket::One,
            2 => CountBucket::Two,
            _ => CountBucket::ThreePlus,
        }
    }

    pub fn parse_lenient(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        if let Ok(v) = t.parse::<CountBucket>() {
            return Ok(v);
        }
        t.parse::<u32>()
            .map(CountBucket::from_count)
            .map_err(|_| format!("unknown value `{t}`, expected 0, 1, 2 or 3+"))
    }
}

/// A set of responder types present at the incident. Entries are unique by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ResponderSet(u8);

impl ResponderSet {
    pub fn empty() -> Self {
        ResponderSet(0)
    }

    pub fn insert(&mut self, r: Responder) {
        self.0 |= 1 << r.index();
    }

    pub fn contains(self, r: Responder) -> bool {
        self.0 & (1 << r.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Responder> {
        Responder::ALL.iter().copied().filter(move |r| self.contains(*r))
    }
}

impl FromIterator<Responder> for ResponderSet {
    fn from_iter<I: IntoIterator<Item = Responder>>(iter: I) -> Self {
        let mut s = ResponderSet::empty();
        for r in iter {
            s.insert(r);
        }
        s
    }
}

impl fmt::Display for ResponderSet {
    /// `police|tow`, or `none` for the empty set.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let labels: Vec<_> = self.iter().map(Responder::label).collect();
        f.write_str(&labels.join("|"))
    }
}

impl FromStr for ResponderSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("none") {
            return Ok(ResponderSet::empty());
        }
        t.split(['|', ';', ','])
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse::<Responder>)
            .collect()
    }
}

impl Serialize for ResponderSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let labels: Vec<_> = self.iter().map(Responder::label).collect();
        labels.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ResponderSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<Responder>::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

/// Largest accepted city category code.
pub const MAX_CITY_NUMBER: u8 = 99;
/// Largest accepted surface type code.
pub const MAX_SURFACE_TYPE: u8 = 20;

/// One traffic incident as reported to the management center.
///
/// `responders` is `None` until responder information arrives; the same goes for
/// the roadway attributes, which enrichment fills from the route/measure lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub id: String,
    pub start_time: NaiveDateTime,
    pub direction: Direction,
    pub county_region: CountyRegion,
    pub city_number: u8,
    pub event_type: EventType,
    pub lanes: u32,
    pub only_shoulders_closed: bool,
    pub vehicles: CountBucket,
    pub trucks: CountBucket,
    pub injuries: bool,
    pub fatalities: bool,
    pub detection_method: DetectionMethod,
    pub responders: Option<ResponderSet>,
    pub route_id: String,
    pub measure: f64,
    pub aadt_bin: Option<u8>,
    pub hourly_volume: Option<u32>,
    pub surface_width: Option<f64>,
    pub surface_type: Option<u8>,
    pub terrain: Option<Terrain>,
    pub duration_minutes: Option<f64>,
}

impl IncidentRecord {
    /// Checks the record-level invariants, reporting every offending field at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.id.trim().is_empty() {
            bad.push("id");
        }
        if self.lanes == 0 {
            bad.push("lanes");
        }
        if self.city_number > MAX_CITY_NUMBER {
            bad.push("city_number");
        }
        if !(self.measure.is_finite() && self.measure >= 0.0) {
            bad.push("measure");
        }
        if matches!(self.aadt_bin, Some(b) if !(1..=5).contains(&b)) {
            bad.push("aadt_bin");
        }
        if matches!(self.surface_width, Some(w) if !(w.is_finite() && w > 0.0)) {
            bad.push("surface_width");
        }
        if matches!(self.surface_type, Some(t) if t > MAX_SURFACE_TYPE) {
            bad.push("surface_type");
        }
        if matches!(self.duration_minutes, Some(d) if !(d.is_finite() && d > 0.0)) {
            bad.push("duration_minutes");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation {
                fields: bad.into_iter().map(String::from).collect(),
                message: "value out of range".into(),
            })
        }
    }

    /// True when responder details are known, i.e. the full feature set can be used.
    pub fn has_full_features(&self) -> bool {
        self.responders.is_some()
    }
}
