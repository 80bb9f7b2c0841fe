//! Binary model archive.
//!
//! ```text
//! "FERMODEL"            8 bytes
//! version               u32
//! header length         u32, then UTF-8 `key=value` lines
//! tensor count          u32
//! per tensor:           name length u32, name, trainable u8,
//!                       rank u32, dims u32 × rank, data f32 × numel
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::backbone::{Backbone, FeatureTable, PRECOMPUTED, REFERENCE};
use super::params::{ParamStore, Tensor};
use super::ClassifierModel;
use crate::emotion::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"FERMODEL";
const VERSION: u32 = 1;

impl ClassifierModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut header = String::new();
        header.push_str(&format!("backbone={}\n", self.backbone.id()));
        if let Backbone::Precomputed(t) = &self.backbone {
            header.push_str(&format!("features={}\n", t.path.display()));
        }
        header.push_str(&format!("dropout_p={}\n", self.dropout_p));
        header.push_str(&format!("input_mean={}\n", self.input_mean));
        let order: Vec<&str> = self.class_order.iter().map(|e| e.name()).collect();
        header.push_str(&format!("class_order={}\n", order.join(",")));
        for (k, v) in &self.config {
            header.push_str(&format!("config.{k}={v}\n"));
        }

        w.write_all(MODEL_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for t in self.params.iter() {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&[t.trainable as u8])?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for d in &t.shape {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ClassifierModel> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ClassifierModel::read_from(&mut bytes.as_slice())
            .map_err(|e| Error::ModelFormat(format!("{}: {e}", path.display())))
    }

    pub fn read_from<R: Read>(r: &mut R) -> std::result::Result<ClassifierModel, String> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| "file too short".to_string())?;
        if &magic != MODEL_MAGIC {
            return Err("not a model file (bad magic)".into());
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(format!("unsupported model version {version}"));
        }
        let header_len = read_u32(r)? as usize;
        let header = String::from_utf8(read_bytes(r, header_len)?)
            .map_err(|_| "header is not UTF-8".to_string())?;

        let mut backbone_id = None;
        let mut features = None;
        let mut dropout_p = None;
        let mut input_mean = None;
        let mut class_order = None;
        let mut config = Vec::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("malformed header line `{line}`"))?;
            match k {
                "backbone" => backbone_id = Some(v.to_string()),
                "features" => features = Some(v.to_string()),
                "dropout_p" => dropout_p = Some(parse::<f64>(k, v)?),
                "input_mean" => input_mean = Some(parse::<f64>(k, v)?),
                "class_order" => {
                    let order: Vec<Emotion> = v
                        .split(',')
                        .map(|s| Emotion::parse_label(s).ok_or_else(|| format!("unknown class `{s}`")))
                        .collect::<std::result::Result<_, _>>()?;
                    let order: [Emotion; NUM_CLASSES] = order
                        .try_into()
                        .map_err(|_| "class_order must list 7 classes".to_string())?;
                    class_order = Some(order);
                }
                _ => match k.strip_prefix("config.") {
                    Some(key) => config.push((key.to_string(), v.to_string())),
                    None => return Err(format!("unknown header key `{k}`")),
                },
            }
        }
        let backbone = match backbone_id.as_deref() {
            Some(REFERENCE) => Backbone::Reference,
            Some(PRECOMPUTED) => {
                let path = features.ok_or("precomputed backbone without `features` path")?;
                Backbone::Precomputed(FeatureTable::load(Path::new(&path)).map_err(|e| e.to_string())?)
            }
            Some(other) => return Err(format!("unknown backbone `{other}`")),
            None => return Err("header lacks `backbone`".into()),
        };

        let count = read_u32(r)? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let name = String::from_utf8(read_bytes(r, name_len)?)
                .map_err(|_| "tensor name is not UTF-8".to_string())?;
            let trainable = read_bytes(r, 1)?[0] != 0;
            let rank = read_u32(r)? as usize;
            let shape: Vec<usize> = (0..rank)
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<std::result::Result<_, _>>()?;
            let numel: usize = shape.iter().product();
            let raw = read_bytes(r, numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            params
                .push(Tensor {
                    name,
                    shape,
                    data,
                    trainable,
                })
                .map_err(|e| e.to_string())?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| e.to_string())? != 0 {
            return Err("trailing bytes after last tensor".into());
        }

        let model = ClassifierModel {
            backbone,
            params,
            dropout_p: dropout_p.ok_or("header lacks `dropout_p`")?,
            input_mean: input_mean.ok_or("header lacks `input_mean`")?,
            class_order: class_order.ok_or("header lacks `class_order`")?,
            config,
        };
        check_shapes(&model)?;
        Ok(model)
    }
}

fn check_shapes(model: &ClassifierModel) -> std::result::Result<(), String> {
    let mut expected: Vec<(&str, Vec<usize>)> = Vec::new();
    if model.backbone == Backbone::Reference {
        expected.extend(super::reference::shapes());
    }
    let f = model.backbone.feature_len();
    expected.push((super::HEAD_WEIGHT, vec![NUM_CLASSES, f]));
    expected.push((super::HEAD_BIAS, vec![NUM_CLASSES]));
    for (name, shape) in expected {
        match model.params.get(name) {
            Some(t) if t.shape == shape => {}
            Some(t) => return Err(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)),
            None => return Err(format!("tensor {name} missing")),
        }
    }
    Ok(())
}

fn parse<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| "unexpected end of file".to_string())?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> std::result::Result<Vec<u8>, String> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf).map_err(|e| e.to_string())?;
    if buf.len() != n {
        return Err("unexpected end of file".into());
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_rounds_to_f32() {
        let mut m = ClassifierModel::reference(9, 0.5).unwrap();
        m.input_mean = 0.4375;
        m.config = vec![("epochs".into(), "3".into())];
        m.freeze(&["conv1."]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fer");
        m.save(&p).unwrap();
        let back = ClassifierModel::load(&p).unwrap();
        assert_eq!(back.input_mean, 0.4375);
        assert_eq!(back.dropout_p, 0.5);
        assert_eq!(back.class_order, Emotion::ALL);
        assert_eq!(back.config, m.config);
        assert!(!back.params.get("conv1.weight").unwrap().trainable);
        for (a, b) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        // a second save of the loaded model is byte-identical
        let p2 = dir.path().join("m2.fer");
        back.save(&p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_corruption() {
        let m = ClassifierModel::reference(1, 0.5).unwrap();
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ClassifierModel::read_from(&mut bad.as_slice()).unwrap_err().contains("magic"));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(ClassifierModel::read_from(&mut &truncated[..]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ClassifierModel::read_from(&mut extra.as_slice()).is_err());
        assert!(ClassifierModel::read_from(&mut bytes.as_slice()).is_ok());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = ClassifierModel::load(Path::new("/nonexistent/m.fer")).unwrap_err();
        assert_eq!(err.category(), "io");
    }
}
