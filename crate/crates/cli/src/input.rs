//! Loading matrices, filters, score samples and layer manifests.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use lipbound::certify::ScoreSamples;
use lipbound::convnorm::ConvFilter;
use lipbound::rescale::LayerDescriptor;
use lipbound::DenseMatrix;
use npyz::{DType, NpyFile, Order, TypeChar};
use serde::Deserialize;

use crate::error::CliError;

/// A C-order float array read from an NPY file, widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn read_npy(path: &Path) -> Result<Array, CliError> {
    let bad = |m: String| CliError::Input(format!("{}: {m}", path.display()));
    let file = File::open(path).map_err(|e| bad(e.to_string()))?;
    let npy = NpyFile::new(BufReader::new(file)).map_err(|e| bad(e.to_string()))?;
    if npy.order() != Order::C {
        return Err(bad("only C-order arrays are supported".into()));
    }
    let shape: Vec<usize> = npy.shape().iter().map(|&s| s as usize).collect();
    let ts = match npy.dtype() {
        DType::Plain(ts) => ts,
        other => return Err(bad(format!("unsupported dtype {}", other.descr()))),
    };
    let little = ts.to_string().starts_with('<');
    let data = match (ts.type_char(), ts.size_field(), little) {
        (TypeChar::Float, 8, true) => npy.into_vec::<f64>(),
        (TypeChar::Float, 4, true) => npy.into_vec::<f32>().map(|v| v.into_iter().map(f64::from).collect()),
        _ => return Err(bad(format!("dtype {ts} is not little-endian float32/float64"))),
    }
    .map_err(|e| bad(e.to_string()))?;
    Ok(Array { shape, data })
}

pub fn write_npy(path: &Path, shape: &[usize], data: &[f64]) -> std::io::Result<()> {
    use npyz::WriterBuilder;
    let shape: Vec<u64> = shape.iter().map(|&s| s as u64).collect();
    let mut w = npyz::WriteOptions::new()
        .default_dtype()
        .shape(&shape)
        .writer(std::io::BufWriter::new(File::create(path)?))
        .begin_nd()?;
    w.extend(data.iter().copied())?;
    w.finish()
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix, CliError> {
    let a = read_npy(path)?;
    match a.shape[..] {
        [r, c] => Ok(DenseMatrix::new(r, c, a.data)?),
        _ => Err(CliError::Input(format!("{}: expected a 2-D array, got shape {:?}", path.display(), a.shape))),
    }
}

pub fn read_filter(path: &Path) -> Result<ConvFilter, CliError> {
    let a = read_npy(path)?;
    match a.shape[..] {
        [co, ci, k1, k2] if k1 == k2 => Ok(ConvFilter::new(co, ci, k1, a.data)?),
        _ => Err(CliError::Input(format!(
            "{}: expected a (c_out, c_in, k, k) array, got shape {:?}",
            path.display(),
            a.shape
        ))),
    }
}

/// Score samples from a 2-D NPY array or a CSV file with one header row.
pub fn read_scores(path: &Path) -> Result<ScoreSamples, CliError> {
    let bad = |m: String| CliError::Input(format!("{}: {m}", path.display()));
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let c = rdr.headers().map_err(|e| bad(e.to_string()))?.len();
        let mut data = Vec::new();
        let mut n = 0;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            for field in rec.iter() {
                data.push(field.trim().parse::<f64>().map_err(|e| bad(format!("row {}: {e}", n + 1)))?);
            }
            n += 1;
        }
        return Ok(ScoreSamples::new(n, c, data)?);
    }
    let a = read_npy(path)?;
    match a.shape[..] {
        [n, c] => Ok(ScoreSamples::new(n, c, a.data)?),
        _ => Err(bad(format!("expected a 2-D (n, c) array, got shape {:?}", a.shape))),
    }
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let a = read_npy(path)?;
    if a.shape.len() != 1 {
        return Err(CliError::Input(format!("{}: expected a 1-D array", path.display())));
    }
    Ok(a.data)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub n: Option<usize>,
    pub t: Option<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        #[serde(default)]
        file: Option<PathBuf>,
        #[serde(default)]
        matrix: Option<Vec<Vec<f64>>>,
    },
    Conv {
        file: PathBuf,
    },
    Batchnorm {
        gamma: Vec<f64>,
        running_var: Vec<f64>,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Pool,
    Activation,
    Residual {
        layers: Vec<LayerSpec>,
    },
}

fn default_eps() -> f64 {
    1e-5
}

pub fn read_manifest(path: &Path) -> Result<(Manifest, Vec<LayerDescriptor>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let layers = m.layers.iter().map(|l| to_descriptor(l, base)).collect::<Result<_, _>>()?;
    Ok((m, layers))
}

fn to_descriptor(spec: &LayerSpec, base: &Path) -> Result<LayerDescriptor, CliError> {
    Ok(match spec {
        LayerSpec::Dense { file: Some(f), matrix: None } => LayerDescriptor::Dense(read_matrix(&base.join(f))?),
        LayerSpec::Dense { file: None, matrix: Some(rows) } => LayerDescriptor::Dense(DenseMatrix::from_rows(rows)?),
        LayerSpec::Dense { .. } => {
            return Err(CliError::Input("dense layer needs exactly one of `file` and `matrix`".into()))
        }
        LayerSpec::Conv { file } => LayerDescriptor::Conv(read_filter(&base.join(file))?),
        LayerSpec::Batchnorm { gamma, running_var, eps } => {
            LayerDescriptor::BatchNormAffine { gamma: gamma.clone(), running_var: running_var.clone(), eps: *eps }
        }
        LayerSpec::Pool => LayerDescriptor::Pool,
        LayerSpec::Activation => LayerDescriptor::Activation1Lip,
        LayerSpec::Residual { layers } => LayerDescriptor::ResidualBlock(
            layers.iter().map(|l| to_descriptor(l, base)).collect::<Result<_, _>>()?,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn npy_round_trip() {
        let dir = std::env::temp_dir().join(format!("lipbound-npy-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("a.npy");
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 0.5 - 3.0).collect();
        write_npy(&p, &[2, 3, 2, 2], &data).unwrap();
        let a = read_npy(&p).unwrap();
        assert_eq!(a.shape, vec![2, 3, 2, 2]);
        assert_eq!(a.data, data);
        assert!(read_matrix(&p).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
