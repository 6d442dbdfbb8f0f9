use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The fourteen numeric stock features, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Open,
    Close,
    High,
    Low,
    MovAvg5,
    MovAvg10,
    MovAvg20,
    Volume,
    AvgVol5,
    AvgVol10,
    AvgVol20,
    PriceChange,
    ChangeRate,
    Turnover,
}

pub const FEATURE_COUNT: usize = 14;

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::Open,
        Feature::Close,
        Feature::High,
        Feature::Low,
        Feature::MovAvg5,
        Feature::MovAvg10,
        Feature::MovAvg20,
        Feature::Volume,
        Feature::AvgVol5,
        Feature::AvgVol10,
        Feature::AvgVol20,
        Feature::PriceChange,
        Feature::ChangeRate,
        Feature::Turnover,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Open => "Open",
            Feature::Close => "Close",
            Feature::High => "High",
            Feature::Low => "Low",
            Feature::MovAvg5 => "MovAvg5",
            Feature::MovAvg10 => "MovAvg10",
            Feature::MovAvg20 => "MovAvg20",
            Feature::Volume => "Volume",
            Feature::AvgVol5 => "AvgVol5",
            Feature::AvgVol10 => "AvgVol10",
            Feature::AvgVol20 => "AvgVol20",
            Feature::PriceChange => "PriceChange",
            Feature::ChangeRate => "ChangeRate",
            Feature::Turnover => "Turnover",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn is_volume(self) -> bool {
        matches!(self, Feature::Volume | Feature::AvgVol5 | Feature::AvgVol10 | Feature::AvgVol20)
    }

    /// Text form fed to the character encoder: integers for volumes,
    /// two decimals for everything else.
    pub fn render(self, value: f64) -> String {
        if self.is_volume() {
            format!("{:.0}", value)
        } else {
            format!("{:.2}", value)
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stock knowledge base snapshot: one value per [`Feature`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StockKB {
    values: [f64; FEATURE_COUNT],
}

impl StockKB {
    pub fn new(values: [f64; FEATURE_COUNT]) -> Self {
        StockKB { values }
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.values[f.index()]
    }

    pub fn set(&mut self, f: Feature, v: f64) {
        self.values[f.index()] = v;
    }

    pub fn values(&self) -> &[f64; FEATURE_COUNT] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (Feature, f64)> + '_ {
        Feature::ALL.into_iter().zip(self.values.iter().copied())
    }

    /// Rendered value surfaces in feature order.
    pub fn surfaces(&self) -> Vec<String> {
        self.iter().map(|(f, v)| f.render(v)).collect()
    }

    /// `Low ≤ Open ≤ High` and `Low ≤ Close ≤ High`.
    pub fn ordering_holds(&self) -> bool {
        let (o, c, h, l) = (
            self.get(Feature::Open),
            self.get(Feature::Close),
            self.get(Feature::High),
            self.get(Feature::Low),
        );
        l <= o && o <= h && l <= c && c <= h
    }

    /// `[Open/MovAvg5, Open/MovAvg10, Open/MovAvg20]`; averages below 1e-8 give ratio 1.
    pub fn trend_vector(&self) -> [f64; 3] {
        let open = self.get(Feature::Open);
        let ratio = |f: Feature| {
            let d = self.get(f);
            if d.abs() < 1e-8 {
                1.0
            } else {
                open / d
            }
        };
        [ratio(Feature::MovAvg5), ratio(Feature::MovAvg10), ratio(Feature::MovAvg20)]
    }
}

impl Serialize for StockKB {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(FEATURE_COUNT))?;
        for (f, v) in self.iter() {
            map.serialize_entry(f.name(), &v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for StockKB {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct KbVisitor;
        impl<'de> Visitor<'de> for KbVisitor {
            type Value = StockKB;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of the 14 stock features")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<StockKB, A::Error> {
                let mut values = [None; FEATURE_COUNT];
                while let Some(key) = map.next_key::<String>()? {
                    let f = Feature::from_name(&key)
                        .ok_or_else(|| de::Error::custom(format!("unknown feature {key}")))?;
                    values[f.index()] = Some(map.next_value::<f64>()?);
                }
                let mut out = [0.0; FEATURE_COUNT];
                for f in Feature::ALL {
                    out[f.index()] = values[f.index()]
                        .ok_or_else(|| de::Error::custom(format!("missing feature {f}")))?;
                }
                Ok(StockKB::new(out))
            }
        }
        d.deserialize_map(KbVisitor)
    }
}
