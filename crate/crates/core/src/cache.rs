//! On-disk cache of `f64` arrays keyed by a JSON descriptor.
//!
//! File layout: 8-byte magic, `u32` format version, `u32` descriptor length,
//! the descriptor JSON, `u64` value count, then the values as little-endian
//! `f64`. The file name is the SHA-256 of the descriptor. Writes go to a
//! temporary file in the cache directory and are renamed into place.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geodesy::{farthest_point_sampling, DiameterEstimate, DistanceMatrix, GeodesyError, WeightedGraph};
use crate::mesh::ParamChart;

const MAGIC: &[u8; 8] = b"IFLATC\0\x01";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt cache entry {0}")]
    Corrupt(PathBuf),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

#[derive(Clone, Debug)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CacheError> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(descriptor: &Value) -> String {
        hex::encode(Sha256::digest(descriptor.to_string().as_bytes()))
    }

    fn path(&self, descriptor: &Value) -> PathBuf {
        self.dir.join(format!("{}.bin", Self::key(descriptor)))
    }

    /// `Ok(None)` on a miss or when the stored descriptor differs.
    pub fn get(&self, descriptor: &Value) -> Result<Option<Vec<f64>>, CacheError> {
        let path = self.path(descriptor);
        let mut bytes = Vec::new();
        match fs::File::open(&path) {
            Ok(mut f) => f.read_to_end(&mut bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let corrupt = || CacheError::Corrupt(path.clone());
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], CacheError> {
            let s = bytes.get(at..at + n).ok_or_else(corrupt)?;
            at += n;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(corrupt());
        }
        if u32::from_le_bytes(take(4)?.try_into().unwrap()) != VERSION {
            return Ok(None);
        }
        let dlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let stored: Value = serde_json::from_slice(take(dlen)?).map_err(|_| corrupt())?;
        if &stored != descriptor {
            return Ok(None);
        }
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let payload = take(count.checked_mul(8).ok_or_else(corrupt)?)?;
        Ok(Some(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }

    pub fn put(&self, descriptor: &Value, values: &[f64]) -> Result<(), CacheError> {
        let desc = descriptor.to_string();
        let mut buf = Vec::with_capacity(24 + desc.len() + 8 * values.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        buf.extend_from_slice(desc.as_bytes());
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&buf)?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.path(descriptor)).map_err(|e| e.error)?;
        Ok(())
    }

    /// Cached values, recomputing (and overwriting) on a miss or a corrupt
    /// entry.
    pub fn get_or_compute<E: From<CacheError>>(
        &self,
        descriptor: &Value,
        compute: impl FnOnce() -> Result<Vec<f64>, E>,
    ) -> Result<Vec<f64>, E> {
        match self.get(descriptor) {
            Ok(Some(v)) => return Ok(v),
            Ok(None) | Err(CacheError::Corrupt(_)) => {}
            Err(e) => return Err(e.into()),
        }
        let v = compute()?;
        self.put(descriptor, &v)?;
        Ok(v)
    }
}

/// Short fingerprint of a chart's nodes.
pub fn chart_fingerprint(chart: &ParamChart) -> String {
    let mut h = Sha256::new();
    h.update(format!("{:?}", chart.kind).as_bytes());
    for x in chart.u.coords.iter().chain(&chart.v.coords) {
        h.update(x.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

fn unpack_rows(flat: &[f64], k: usize) -> Option<Vec<Vec<f64>>> {
    if k == 0 || flat.len() % k != 0 {
        return None;
    }
    Some(flat.chunks_exact(flat.len() / k).map(|c| c.to_vec()).collect())
}

/// Distance rows from `sources`, through the cache when one is given.
pub fn distance_matrix(
    cache: Option<&Cache>,
    chart: &ParamChart,
    g: &WeightedGraph,
    sources: &[usize],
    metric_hash: &str,
) -> Result<DistanceMatrix, CacheError> {
    let Some(cache) = cache else {
        return Ok(DistanceMatrix::compute(g, sources, metric_hash)?);
    };
    let desc = serde_json::json!({
        "kind": "distances",
        "chart": chart_fingerprint(chart),
        "graph": g.fingerprint(),
        "metric": metric_hash,
        "sources": sources,
    });
    let flat = cache.get_or_compute(&desc, || -> Result<Vec<f64>, CacheError> {
        let m = DistanceMatrix::compute(g, sources, metric_hash)?;
        Ok(m.rows.concat())
    })?;
    let rows = unpack_rows(&flat, sources.len()).ok_or_else(|| CacheError::Corrupt(cache.path(&desc)))?;
    Ok(DistanceMatrix {
        sources: sources.to_vec(),
        rows,
        metric_hash: metric_hash.to_string(),
        tau_mesh: None,
    })
}

/// Farthest-point sampling through the cache. The payload is the landmark
/// list followed by their distance rows.
pub fn fps(
    cache: Option<&Cache>,
    chart: &ParamChart,
    g: &WeightedGraph,
    count: usize,
    start: usize,
    metric_hash: &str,
) -> Result<DiameterEstimate, CacheError> {
    let Some(cache) = cache else {
        return Ok(farthest_point_sampling(g, count, start, metric_hash)?);
    };
    let desc = serde_json::json!({
        "kind": "fps",
        "chart": chart_fingerprint(chart),
        "graph": g.fingerprint(),
        "metric": metric_hash,
        "count": count,
        "start": start,
    });
    let flat = cache.get_or_compute(&desc, || -> Result<Vec<f64>, CacheError> {
        let e = farthest_point_sampling(g, count, start, metric_hash)?;
        let mut out = vec![e.landmarks.len() as f64];
        out.extend(e.landmarks.iter().map(|&l| l as f64));
        out.extend(e.distances.rows.concat());
        Ok(out)
    })?;
    let bad = || CacheError::Corrupt(cache.path(&desc));
    let k = *flat.first().ok_or_else(bad)? as usize;
    let landmarks: Vec<usize> = flat.get(1..1 + k).ok_or_else(bad)?.iter().map(|&x| x as usize).collect();
    let rows = unpack_rows(&flat[1 + k..], k).ok_or_else(bad)?;
    let distances = DistanceMatrix {
        sources: landmarks.clone(),
        rows,
        metric_hash: metric_hash.to_string(),
        tau_mesh: None,
    };
    Ok(DiameterEstimate {
        value: distances.max_entry(),
        landmarks,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{Discretization, FamilySpec, Instance};

    #[test]
    fn round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let c = Cache::open(dir.path()).unwrap();
        let d = serde_json::json!({"a": 1});
        assert_eq!(c.get(&d).unwrap(), None);
        let vals = vec![1.5, -0.0, f64::MAX, 1e-300];
        c.put(&d, &vals).unwrap();
        assert_eq!(c.get(&d).unwrap().unwrap(), vals);
        assert_eq!(c.get(&serde_json::json!({"a": 2})).unwrap(), None);
    }

    #[test]
    fn corrupt_entry_is_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let c = Cache::open(dir.path()).unwrap();
        let d = serde_json::json!("x");
        fs::write(c.path(&d), b"garbage").unwrap();
        assert!(matches!(c.get(&d), Err(CacheError::Corrupt(_))));
        let v = c
            .get_or_compute(&d, || -> Result<Vec<f64>, CacheError> { Ok(vec![3.0]) })
            .unwrap();
        assert_eq!(v, vec![3.0]);
        assert_eq!(c.get(&d).unwrap().unwrap(), vec![3.0]);
    }

    #[test]
    fn cached_distances_match_cold() {
        let dir = tempfile::tempdir().unwrap();
        let c = Cache::open(dir.path()).unwrap();
        let inst = Instance::build(&FamilySpec::ilmanen(2), Discretization { resolution: 16, ..Default::default() }).unwrap();
        let h = &inst.lenj.metric_hash;
        let cold = fps(None, &inst.chart, &inst.wgj, 5, 3, h).unwrap();
        let warm1 = fps(Some(&c), &inst.chart, &inst.wgj, 5, 3, h).unwrap();
        let warm2 = fps(Some(&c), &inst.chart, &inst.wgj, 5, 3, h).unwrap();
        assert_eq!(cold.landmarks, warm2.landmarks);
        assert_eq!(cold.distances.rows, warm1.distances.rows);
        assert_eq!(cold.distances.rows, warm2.distances.rows);
        let m1 = distance_matrix(Some(&c), &inst.chart, &inst.wg0, &[0, 7], &inst.len0.metric_hash).unwrap();
        let m2 = distance_matrix(None, &inst.chart, &inst.wg0, &[0, 7], &inst.len0.metric_hash).unwrap();
        assert_eq!(m1.rows, m2.rows);
    }
}
