//! Binary array container: a JSON header followed by raw little-endian arrays.
//!
//! Layout:
//!
//! ```text
//! b"WMC1" | u64 LE header length | header JSON (UTF-8) | array bytes
//! ```
//!
//! The header carries a free-form `meta` object and one entry per array with
//! its name, dtype (`<f8` or `<i4`), shape, and byte offset into the data
//! section. Arrays are stored row-major.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WMC1";
const FORMAT: &str = "worldmotion-container";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    I32(Vec<i32>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "<f8",
            ArrayData::I32(_) => "<i4",
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::I32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(default)]
    meta: Map<String, Value>,
    arrays: Vec<ArrayHeader>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: Map<String, Value>,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_f64(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(NamedArray {
            name: name.to_string(),
            shape,
            data: ArrayData::F64(data),
        });
    }

    pub fn push_i32(&mut self, name: &str, shape: Vec<usize>, data: Vec<i32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(NamedArray {
            name: name.to_string(),
            shape,
            data: ArrayData::I32(data),
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Fetches a float array, checking its shape. `None` entries in
    /// `shape` match any extent.
    pub fn f64_array(&self, name: &str, shape: &[Option<usize>]) -> Result<Option<(&[usize], &[f64])>> {
        let Some(arr) = self.get(name) else {
            return Ok(None);
        };
        check_shape(arr, shape)?;
        match &arr.data {
            ArrayData::F64(v) => Ok(Some((&arr.shape, v))),
            ArrayData::I32(_) => Err(Error::validation(format!("array '{name}' must be <f8"))),
        }
    }

    pub fn i32_array(&self, name: &str, shape: &[Option<usize>]) -> Result<Option<(&[usize], &[i32])>> {
        let Some(arr) = self.get(name) else {
            return Ok(None);
        };
        check_shape(arr, shape)?;
        match &arr.data {
            ArrayData::I32(v) => Ok(Some((&arr.shape, v))),
            ArrayData::F64(_) => Err(Error::validation(format!("array '{name}' must be <i4"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut headers = Vec::with_capacity(self.arrays.len());
        let mut offset = 0u64;
        for a in &self.arrays {
            let nbytes = (a.data.len() * if matches!(a.data, ArrayData::F64(_)) { 8 } else { 4 }) as u64;
            headers.push(ArrayHeader {
                name: a.name.clone(),
                dtype: a.data.dtype().to_string(),
                shape: a.shape.clone(),
                offset,
                nbytes,
            });
            offset += nbytes;
        }
        let header = Header {
            format: FORMAT.to_string(),
            version: 1,
            meta: self.meta.clone(),
            arrays: headers,
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header_json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for a in &self.arrays {
            match &a.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err("missing container magic".into());
        }
        let hlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let data_start = 12usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or("header length exceeds file size")?;
        let header: Header = serde_json::from_slice(&bytes[12..data_start]).map_err(|e| format!("bad header: {e}"))?;
        if header.format != FORMAT {
            return Err(format!("unexpected format '{}'", header.format));
        }
        if header.version != 1 {
            return Err(format!("unsupported container version {}", header.version));
        }
        let data = &bytes[data_start..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for h in header.arrays {
            let count: usize = h.shape.iter().product();
            let width = match h.dtype.as_str() {
                "<f8" => 8,
                "<i4" => 4,
                other => return Err(format!("array '{}': unsupported dtype '{other}'", h.name)),
            };
            if h.nbytes as usize != count * width {
                return Err(format!("array '{}': byte size does not match shape", h.name));
            }
            let start = h.offset as usize;
            let raw = data
                .get(start..start + h.nbytes as usize)
                .ok_or_else(|| format!("array '{}' extends past end of file", h.name))?;
            let data = if width == 8 {
                ArrayData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            } else {
                ArrayData::I32(
                    raw.chunks_exact(4)
                        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            };
            arrays.push(NamedArray {
                name: h.name,
                shape: h.shape,
                data,
            });
        }
        Ok(Container {
            meta: header.meta,
            arrays,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::parse(path, m))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

impl Container {
    /// Pure-JSON form: `{format, version, meta, arrays: {name: {dtype, shape, data}}}`.
    pub fn to_json(&self) -> Value {
        let arrays: Map<String, Value> = self
            .arrays
            .iter()
            .map(|a| {
                let data = match &a.data {
                    ArrayData::F64(v) => Value::from(v.clone()),
                    ArrayData::I32(v) => Value::from(v.clone()),
                };
                let mut entry = Map::new();
                entry.insert("dtype".into(), Value::from(a.data.dtype()));
                entry.insert("shape".into(), Value::from(a.shape.clone()));
                entry.insert("data".into(), data);
                (a.name.clone(), Value::Object(entry))
            })
            .collect();
        let mut root = Map::new();
        root.insert("format".into(), Value::from(FORMAT));
        root.insert("version".into(), Value::from(1));
        root.insert("meta".into(), Value::Object(self.meta.clone()));
        root.insert("arrays".into(), Value::Object(arrays));
        Value::Object(root)
    }

    pub fn from_json(value: &Value) -> std::result::Result<Self, String> {
        let root = value.as_object().ok_or("top level must be an object")?;
        if root.get("format").and_then(Value::as_str) != Some(FORMAT) {
            return Err(format!("'format' must be \"{FORMAT}\""));
        }
        if root.get("version").and_then(Value::as_u64) != Some(1) {
            return Err("'version' must be 1".into());
        }
        let meta = match root.get("meta") {
            None => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err("'meta' must be an object".into()),
        };
        let arrays = root
            .get("arrays")
            .and_then(Value::as_object)
            .ok_or("'arrays' must be an object")?;
        let mut out = Container {
            meta,
            arrays: Vec::new(),
        };
        for (name, entry) in arrays {
            let shape: Vec<usize> = entry
                .get("shape")
                .and_then(|s| serde_json::from_value(s.clone()).ok())
                .ok_or_else(|| format!("array '{name}': missing or bad 'shape'"))?;
            let data = entry
                .get("data")
                .and_then(Value::as_array)
                .ok_or_else(|| format!("array '{name}': missing 'data'"))?;
            let count: usize = shape.iter().product();
            if data.len() != count {
                return Err(format!("array '{name}': {} values for shape {shape:?}", data.len()));
            }
            let dtype = entry.get("dtype").and_then(Value::as_str).unwrap_or("<f8");
            match dtype {
                "<f8" => {
                    let v: Option<Vec<f64>> = data.iter().map(Value::as_f64).collect();
                    out.push_f64(
                        name,
                        shape,
                        v.ok_or_else(|| format!("array '{name}': non-numeric value"))?,
                    );
                }
                "<i4" => {
                    let v: Option<Vec<i32>> = data
                        .iter()
                        .map(|x| x.as_i64().and_then(|i| i32::try_from(i).ok()))
                        .collect();
                    out.push_i32(
                        name,
                        shape,
                        v.ok_or_else(|| format!("array '{name}': non-integer value"))?,
                    );
                }
                other => return Err(format!("array '{name}': unsupported dtype '{other}'")),
            }
        }
        Ok(out)
    }
}

fn check_shape(arr: &NamedArray, expected: &[Option<usize>]) -> Result<()> {
    let ok = arr.shape.len() == expected.len()
        && arr
            .shape
            .iter()
            .zip(expected)
            .all(|(have, want)| want.is_none_or(|w| w == *have));
    if ok {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "array '{}' has shape {:?}, expected {:?}",
            arr.name, arr.shape, expected
        )))
    }
}
