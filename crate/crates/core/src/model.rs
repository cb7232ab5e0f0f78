//! Points, objects and queries, plus ingestion of feature-vector files and
//! point-to-object mapping sidecars.
//!
//! A vector file is a sequence of little-endian records, each a 4-byte signed
//! dimension `d` followed by `d` 4-byte floats. The object map is a text file
//! with one `point_id,object_id` line per point; a header line is optional.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type PointId = u32;
pub type ObjectId = u32;

/// One feature vector. `point_id` is its position in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub point_id: PointId,
    pub object_id: Option<ObjectId>,
    pub coords: Vec<f32>,
}

/// An object and the ids of the points associated with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultimediaObject {
    pub object_id: ObjectId,
    pub point_ids: Vec<PointId>,
}

impl MultimediaObject {
    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }
}

/// A query object: an ordered list of query points of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryObject {
    pub object_id: ObjectId,
    pub points: Vec<Vec<f32>>,
}

impl QueryObject {
    pub fn new(object_id: ObjectId, points: Vec<Vec<f32>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::param("a query object needs at least one point"));
        };
        let dim = first.len();
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(Self { object_id, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn coords(&self) -> Vec<&[f32]> {
        self.points.iter().map(Vec::as_slice).collect()
    }
}

/// An immutable collection of points grouped into objects.
///
/// Objects are kept sorted by `object_id`; an object's position in that order
/// is its *slot*, which the query machinery uses as a dense index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dimension: usize,
    points: Vec<FeatureVector>,
    objects: Vec<MultimediaObject>,
    slot_of_point: Vec<u32>,
}

impl Dataset {
    /// Builds a dataset from points whose `object_id` is set.
    pub fn from_points(points: Vec<FeatureVector>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::param("dataset must contain at least one point"));
        };
        let dimension = first.coords.len();
        if dimension == 0 {
            return Err(Error::param("dimension must be at least 1"));
        }
        let mut groups: BTreeMap<ObjectId, Vec<PointId>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            if p.point_id as usize != i {
                return Err(Error::Mapping(format!(
                    "point at position {i} carries id {}",
                    p.point_id
                )));
            }
            if p.coords.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: p.coords.len(),
                });
            }
            let oid = p
                .object_id
                .ok_or_else(|| Error::Mapping(format!("point {i} is not mapped to an object")))?;
            groups.entry(oid).or_default().push(p.point_id);
        }
        let objects: Vec<MultimediaObject> = groups
            .into_iter()
            .map(|(object_id, point_ids)| MultimediaObject {
                object_id,
                point_ids,
            })
            .collect();
        let mut slot_of_point = vec![0u32; points.len()];
        for (slot, obj) in objects.iter().enumerate() {
            for &pid in &obj.point_ids {
                slot_of_point[pid as usize] = slot as u32;
            }
        }
        Ok(Self {
            dimension,
            points,
            objects,
            slot_of_point,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of points, `n`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of objects, `S`.
    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn points(&self) -> &[FeatureVector] {
        &self.points
    }

    pub fn point(&self, id: PointId) -> &[f32] {
        &self.points[id as usize].coords
    }

    pub fn objects(&self) -> &[MultimediaObject] {
        &self.objects
    }

    pub fn object(&self, slot: usize) -> &MultimediaObject {
        &self.objects[slot]
    }

    pub fn slot_of_point(&self, id: PointId) -> usize {
        self.slot_of_point[id as usize] as usize
    }

    pub fn slot_of_object(&self, object_id: ObjectId) -> Option<usize> {
        self.objects
            .binary_search_by_key(&object_id, |o| o.object_id)
            .ok()
    }

    /// Coordinates of every point of the object in `slot`.
    pub fn object_coords(&self, slot: usize) -> Vec<&[f32]> {
        self.objects[slot]
            .point_ids
            .iter()
            .map(|&pid| self.point(pid))
            .collect()
    }

    /// Size of the smallest object, `L`.
    pub fn min_object_size(&self) -> usize {
        self.objects.iter().map(|o| o.len()).min().unwrap_or(0)
    }

    /// Turns the object in `slot` into a query object.
    pub fn object_as_query(&self, slot: usize) -> QueryObject {
        let obj = &self.objects[slot];
        QueryObject {
            object_id: obj.object_id,
            points: obj
                .point_ids
                .iter()
                .map(|&pid| self.point(pid).to_vec())
                .collect(),
        }
    }
}

/// Reads a vector file. Point ids are assigned in file order.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<Vec<FeatureVector>> {
    let bytes = fs::read(path)?;
    decode_feature_vectors(&bytes)
}

pub fn decode_feature_vectors(bytes: &[u8]) -> Result<Vec<FeatureVector>> {
    let mut out = Vec::new();
    let mut dim: Option<usize> = None;
    let mut pos = 0usize;
    while pos < bytes.len() {
        let record = out.len();
        let header = bytes.get(pos..pos + 4).ok_or_else(|| Error::Format {
            record,
            reason: "truncated dimension header".into(),
        })?;
        let d = i32::from_le_bytes(header.try_into().unwrap());
        if d <= 0 {
            return Err(Error::Format {
                record,
                reason: format!("non-positive dimension {d}"),
            });
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Format {
                    record,
                    reason: format!("declared dimension {d} differs from dataset dimension {expected}"),
                });
            }
            Some(_) => {}
        }
        pos += 4;
        let body = bytes.get(pos..pos + 4 * d).ok_or_else(|| Error::Format {
            record,
            reason: format!("expected {d} floats, record is truncated"),
        })?;
        let coords = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 4 * d;
        out.push(FeatureVector {
            point_id: record as PointId,
            object_id: None,
            coords,
        });
    }
    Ok(out)
}

pub fn write_feature_file<'a, I>(path: impl AsRef<Path>, vectors: I) -> Result<()>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in vectors {
        w.write_all(&(v.len() as i32).to_le_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `point_id,object_id` sidecar and groups `points` into a dataset.
pub fn load_object_map(path: impl AsRef<Path>, points: Vec<FeatureVector>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    apply_object_map(&text, points)
}

pub fn apply_object_map(text: &str, mut points: Vec<FeatureVector>) -> Result<Dataset> {
    let mut seen_data = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse::<u64>().ok()?, b.trim().parse::<u64>().ok()?)));
        let Some((pid, oid)) = parsed else {
            if !seen_data && lineno == 0 {
                continue; // header
            }
            return Err(Error::Mapping(format!(
                "line {}: expected `point_id,object_id`, got {line:?}",
                lineno + 1
            )));
        };
        seen_data = true;
        let oid = ObjectId::try_from(oid)
            .ok()
            .filter(|&o| o != ObjectId::MAX)
            .ok_or_else(|| Error::Mapping(format!("line {}: object id out of range", lineno + 1)))?;
        let slot = usize::try_from(pid)
            .ok()
            .and_then(|p| points.get_mut(p))
            .ok_or_else(|| {
                Error::Mapping(format!("line {}: point {pid} does not exist", lineno + 1))
            })?;
        if slot.object_id.is_some() {
            return Err(Error::Mapping(format!(
                "line {}: point {pid} is mapped more than once",
                lineno + 1
            )));
        }
        slot.object_id = Some(oid);
    }
    if let Some(p) = points.iter().find(|p| p.object_id.is_none()) {
        return Err(Error::Mapping(format!(
            "point {} has no object mapping",
            p.point_id
        )));
    }
    Dataset::from_points(points)
}

pub fn write_object_map(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "point_id,object_id")?;
    for p in dataset.points() {
        writeln!(w, "{},{}", p.point_id, p.object_id.unwrap_or_default())?;
    }
    w.flush()?;
    Ok(())
}

/// Desk-scale stand-in for a real descriptor collection: every object is a
/// Gaussian cluster of `points_per_object` points around a standard-normal
/// centre, with per-coordinate standard deviation `cluster_spread`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub objects: usize,
    pub points_per_object: usize,
    pub dimension: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.objects == 0 || self.points_per_object == 0 || self.dimension == 0 {
            return Err(Error::param("synthetic counts must all be at least 1"));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::param("cluster spread must be finite and non-negative"));
        }
        Ok(())
    }

    fn centers(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..self.objects)
            .map(|_| {
                (0..self.dimension)
                    .map(|_| StandardNormal.sample(rng))
                    .collect()
            })
            .collect()
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let centers = self.centers(&mut rng);
        let mut points = Vec::with_capacity(self.objects * self.points_per_object);
        for (oid, center) in centers.iter().enumerate() {
            for _ in 0..self.points_per_object {
                let coords = center
                    .iter()
                    .map(|&c| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        (c + self.cluster_spread * e) as f32
                    })
                    .collect();
                points.push(FeatureVector {
                    point_id: points.len() as PointId,
                    object_id: Some(oid as ObjectId),
                    coords,
                });
            }
        }
        Dataset::from_points(points)
    }
}

pub fn synth_dataset(
    objects: usize,
    points_per_object: usize,
    dimension: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    SynthSpec {
        objects,
        points_per_object,
        dimension,
        cluster_spread,
        seed,
    }
    .generate()
}

/// Picks `count` distinct objects uniformly at random as query objects.
///
/// With `points_per_query` set, each query keeps a random subset of that many
/// of its object's points (all of them if the object is smaller).
pub fn sample_queries(
    dataset: &Dataset,
    count: usize,
    points_per_query: Option<usize>,
    seed: u64,
) -> Result<Vec<QueryObject>> {
    if count == 0 || count > dataset.num_objects() {
        return Err(Error::param(format!(
            "query count must be in 1..={}, got {count}",
            dataset.num_objects()
        )));
    }
    if points_per_query == Some(0) {
        return Err(Error::param("query objects need at least one point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots = index::sample(&mut rng, dataset.num_objects(), count).into_vec();
    slots.sort_unstable();
    Ok(slots
        .into_iter()
        .map(|slot| {
            let mut q = dataset.object_as_query(slot);
            if let Some(keep) = points_per_query {
                if keep < q.points.len() {
                    let mut pick = index::sample(&mut rng, q.points.len(), keep).into_vec();
                    pick.sort_unstable();
                    q.points = pick.into_iter().map(|i| q.points[i].clone()).collect();
                }
            }
            q
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(id: u32, obj: Option<u32>, coords: &[f32]) -> FeatureVector {
        FeatureVector {
            point_id: id,
            object_id: obj,
            coords: coords.to_vec(),
        }
    }

    fn record(d: i32, xs: &[f32]) -> Vec<u8> {
        let mut b = d.to_le_bytes().to_vec();
        for x in xs {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_two_records() {
        let mut bytes = record(2, &[0.0, 1.0]);
        bytes.extend(record(2, &[3.0, 4.0]));
        let v = decode_feature_vectors(&bytes).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].point_id, 0);
        assert_eq!(v[1].point_id, 1);
        assert_eq!(v[1].coords, vec![3.0, 4.0]);
        assert!(v.iter().all(|p| p.object_id.is_none()));
    }

    #[test]
    fn mismatched_dimension_names_record() {
        let mut bytes = record(2, &[0.0, 1.0]);
        bytes.extend(record(3, &[3.0, 4.0, 5.0]));
        match decode_feature_vectors(&bytes) {
            Err(Error::Format { record, .. }) => assert_eq!(record, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_record_is_format_error() {
        let mut bytes = record(2, &[0.0, 1.0]);
        bytes.extend(record(2, &[3.0, 4.0]));
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(
            decode_feature_vectors(&bytes),
            Err(Error::Format { record: 1, .. })
        ));
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(decode_feature_vectors(&[]).unwrap().is_empty());
    }

    #[test]
    fn object_map_groups_points() {
        let pts = (0..4).map(|i| fv(i, None, &[i as f32])).collect();
        let ds = apply_object_map("point_id,object_id\n0,0\n1,0\n2,1\n3,1\n", pts).unwrap();
        assert_eq!(ds.num_objects(), 2);
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.object(1).point_ids, vec![2, 3]);
        assert_eq!(ds.slot_of_point(3), 1);
    }

    #[test]
    fn object_map_without_header() {
        let pts = (0..2).map(|i| fv(i, None, &[i as f32])).collect();
        let ds = apply_object_map("0,7\n1,3\n", pts).unwrap();
        assert_eq!(ds.objects()[0].object_id, 3);
        assert_eq!(ds.slot_of_object(7), Some(1));
    }

    #[test]
    fn object_map_errors() {
        let pts = || (0..4).map(|i| fv(i, None, &[i as f32])).collect::<Vec<_>>();
        assert!(matches!(
            apply_object_map("0,0\n1,0\n2,1\n", pts()),
            Err(Error::Mapping(_))
        ));
        assert!(matches!(
            apply_object_map("0,0\n1,0\n2,1\n3,1\n9,1\n", pts()),
            Err(Error::Mapping(_))
        ));
        assert!(matches!(
            apply_object_map("0,0\n1,0\n2,1\n3,1\n3,0\n", pts()),
            Err(Error::Mapping(_))
        ));
        assert!(matches!(
            apply_object_map("0,0\nfoo\n", pts()),
            Err(Error::Mapping(_))
        ));
    }

    #[test]
    fn point_counts_sum_to_n() {
        let ds = synth_dataset(7, 5, 3, 0.1, 1).unwrap();
        let total: usize = ds.objects().iter().map(|o| o.len()).sum();
        assert_eq!(total, ds.len());
        assert_eq!(ds.len(), 35);
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_dataset(2, 3, 2, 0.1, 7).unwrap();
        let b = synth_dataset(2, 3, 2, 0.1, 7).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.num_objects(), 2);
        assert_eq!(a, b);
        assert_ne!(a, synth_dataset(2, 3, 2, 0.1, 8).unwrap());
    }

    #[test]
    fn synth_rejects_zero_counts() {
        assert!(synth_dataset(0, 3, 2, 0.1, 7).is_err());
        assert!(synth_dataset(1, 0, 2, 0.1, 7).is_err());
        assert!(synth_dataset(1, 3, 0, 0.1, 7).is_err());
    }

    #[test]
    fn query_sampling_is_seeded_and_subsets() {
        let ds = synth_dataset(10, 6, 2, 0.1, 3).unwrap();
        let a = sample_queries(&ds, 4, Some(3), 11).unwrap();
        let b = sample_queries(&ds, 4, Some(3), 11).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|q| q.len() == 3));
        let full = sample_queries(&ds, 10, None, 11).unwrap();
        assert!(full.iter().all(|q| q.len() == 6));
        assert!(sample_queries(&ds, 11, None, 1).is_err());
    }
}
