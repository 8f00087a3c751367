//! Closed label vocabularies: detection classes, paint colors, viewpoint sectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The ten standard detection classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Car,
    Truck,
    Bus,
    Trailer,
    ConstructionVehicle,
    Pedestrian,
    Motorcycle,
    Bicycle,
    TrafficCone,
    Barrier,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::Car,
        Category::Truck,
        Category::Bus,
        Category::Trailer,
        Category::ConstructionVehicle,
        Category::Pedestrian,
        Category::Motorcycle,
        Category::Bicycle,
        Category::TrafficCone,
        Category::Barrier,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Car => "car",
            Category::Truck => "truck",
            Category::Bus => "bus",
            Category::Trailer => "trailer",
            Category::ConstructionVehicle => "construction_vehicle",
            Category::Pedestrian => "pedestrian",
            Category::Motorcycle => "motorcycle",
            Category::Bicycle => "bicycle",
            Category::TrafficCone => "traffic_cone",
            Category::Barrier => "barrier",
        }
    }

    /// Words used when the class is mentioned in a sentence.
    pub fn phrase(self) -> &'static str {
        match self {
            Category::ConstructionVehicle => "construction vehicle",
            Category::TrafficCone => "traffic cone",
            other => other.name(),
        }
    }

    /// Typical `(l, w, h)` in meters.
    pub fn mean_size(self) -> [f64; 3] {
        match self {
            Category::Car => [4.63, 1.97, 1.74],
            Category::Truck => [6.93, 2.51, 2.84],
            Category::Bus => [10.9, 2.94, 3.47],
            Category::Trailer => [12.1, 2.90, 3.87],
            Category::ConstructionVehicle => [6.37, 2.85, 3.19],
            Category::Pedestrian => [0.73, 0.67, 1.77],
            Category::Motorcycle => [2.11, 0.77, 1.47],
            Category::Bicycle => [1.70, 0.60, 1.28],
            Category::TrafficCone => [0.41, 0.41, 1.07],
            Category::Barrier => [0.50, 2.53, 0.98],
        }
    }

    pub fn is_vehicle(self) -> bool {
        matches!(
            self,
            Category::Car
                | Category::Truck
                | Category::Bus
                | Category::Trailer
                | Category::ConstructionVehicle
                | Category::Motorcycle
                | Category::Bicycle
        )
    }

    /// Outline color used on synthetic camera rasters.
    pub fn outline_rgb(self) -> [u8; 3] {
        const PALETTE: [[u8; 3]; 10] = [
            [0, 200, 255],
            [255, 140, 0],
            [160, 0, 255],
            [120, 80, 40],
            [255, 0, 160],
            [0, 255, 0],
            [255, 255, 120],
            [0, 120, 60],
            [255, 90, 0],
            [90, 90, 255],
        ];
        PALETTE[self.index()]
    }

    /// Maps a raw annotation label (nuScenes taxonomy or a plain class name)
    /// onto a standard class. Classes outside the ten are `None`.
    pub fn from_raw(label: &str) -> Option<Category> {
        let l = label.trim().to_ascii_lowercase();
        if let Ok(c) = l.parse::<Category>() {
            return Some(c);
        }
        let c = match l.as_str() {
            "vehicle.car" => Category::Car,
            "vehicle.truck" => Category::Truck,
            "vehicle.bus.bendy" | "vehicle.bus.rigid" => Category::Bus,
            "vehicle.trailer" => Category::Trailer,
            "vehicle.construction" => Category::ConstructionVehicle,
            "human.pedestrian.adult"
            | "human.pedestrian.child"
            | "human.pedestrian.construction_worker"
            | "human.pedestrian.police_officer" => Category::Pedestrian,
            "vehicle.motorcycle" => Category::Motorcycle,
            "vehicle.bicycle" => Category::Bicycle,
            "movable_object.trafficcone" => Category::TrafficCone,
            "movable_object.barrier" => Category::Barrier,
            _ => return None,
        };
        Some(c)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s || c.phrase() == s)
            .ok_or_else(|| Error::Format(format!("unknown category `{s}`")))
    }
}

/// Paint color of an object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Blue,
    Black,
    White,
    Gray,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Blue,
        Color::Black,
        Color::White,
        Color::Gray,
        Color::Yellow,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Black => "black",
            Color::White => "white",
            Color::Gray => "gray",
            Color::Yellow => "yellow",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [200, 30, 30],
            Color::Blue => [30, 60, 200],
            Color::Black => [25, 25, 25],
            Color::White => [235, 235, 235],
            Color::Gray => [128, 128, 128],
            Color::Yellow => [230, 200, 30],
        }
    }

    /// Mean LiDAR reflectance. Dark paints return weakly, light paints
    /// strongly; hues within a group are indistinguishable to the sensor.
    pub fn reflectance(self) -> f64 {
        match self {
            Color::Red | Color::Blue | Color::Black => 0.25,
            Color::White | Color::Gray | Color::Yellow => 0.65,
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Color {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Color::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown color `{s}`")))
    }
}

/// Whether the referred object is the only one of its class in the frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Unique,
    Multiple,
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::Unique => "unique",
            Attribute::Multiple => "multiple",
        })
    }
}

/// One of six equal 60 degree azimuth sectors around the ego vehicle,
/// centered on the camera headings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Viewpoint {
    Front,
    FrontLeft,
    BackLeft,
    Back,
    BackRight,
    FrontRight,
}

impl Viewpoint {
    /// Counterclockwise from the front sector.
    pub const ALL: [Viewpoint; 6] = [
        Viewpoint::Front,
        Viewpoint::FrontLeft,
        Viewpoint::BackLeft,
        Viewpoint::Back,
        Viewpoint::BackRight,
        Viewpoint::FrontRight,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&v| v == self).unwrap()
    }

    /// Sector center azimuth in radians (`atan2(y, x)` convention).
    pub fn heading(self) -> f64 {
        let deg = 60.0 * self.index() as f64;
        let deg = if deg > 180.0 { deg - 360.0 } else { deg };
        deg.to_radians()
    }

    /// Sector containing the given azimuth.
    pub fn from_azimuth(azimuth: f64) -> Viewpoint {
        let k = (azimuth.to_degrees() / 60.0).round() as i64;
        Self::ALL[k.rem_euclid(6) as usize]
    }

    pub fn phrase(self) -> &'static str {
        match self {
            Viewpoint::Front => "front",
            Viewpoint::FrontLeft => "front left",
            Viewpoint::BackLeft => "back left",
            Viewpoint::Back => "back",
            Viewpoint::BackRight => "back right",
            Viewpoint::FrontRight => "front right",
        }
    }

    pub fn from_phrase(s: &str) -> Option<Viewpoint> {
        Self::ALL.iter().copied().find(|v| v.phrase() == s)
    }
}

impl fmt::Display for Viewpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_mapping() {
        assert_eq!(Category::from_raw("vehicle.bus.bendy"), Some(Category::Bus));
        assert_eq!(Category::from_raw("human.pedestrian.child"), Some(Category::Pedestrian));
        assert_eq!(Category::from_raw("traffic_cone"), Some(Category::TrafficCone));
        assert_eq!(Category::from_raw("animal"), None);
        assert_eq!(Category::from_raw("vehicle.emergency.police"), None);
    }

    #[test]
    fn sectors() {
        assert_eq!(Viewpoint::from_azimuth(0.0), Viewpoint::Front);
        assert_eq!(Viewpoint::from_azimuth(1.0), Viewpoint::FrontLeft);
        assert_eq!(Viewpoint::from_azimuth(-1.0), Viewpoint::FrontRight);
        assert_eq!(Viewpoint::from_azimuth(3.1), Viewpoint::Back);
        assert_eq!(Viewpoint::from_azimuth(-3.1), Viewpoint::Back);
        assert_eq!(Viewpoint::from_azimuth(-2.1), Viewpoint::BackRight);
        for v in Viewpoint::ALL {
            assert_eq!(Viewpoint::from_azimuth(v.heading()), v);
        }
    }
}
