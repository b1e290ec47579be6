//! JSON encodings shared by result files.
//!
//! Complex matrices are written row-major as `[re, im]` pairs. Canonical
//! output sorts object keys and prints every float with 17 significant digits
//! so identical inputs give byte-identical files.

use std::io;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::linalg::CMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMatrix> for ComplexMatrixJson {
    fn from(m: &CMatrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let z = m[(i, j)];
                data.push([z.re, z.im]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl ComplexMatrixJson {
    pub fn to_matrix(&self) -> Option<CMatrix> {
        if self.data.len() != self.rows * self.cols {
            return None;
        }
        Some(DMatrix::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            Complex64::new(re, im)
        }))
    }
}

/// `#[serde(with = "complex_matrix")]` adapter for `CMatrix` fields.
pub mod complex_matrix {
    use super::*;
    use serde::{de::Error, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        ComplexMatrixJson::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let j = ComplexMatrixJson::deserialize(d)?;
        j.to_matrix()
            .ok_or_else(|| D::Error::custom("matrix data length does not match its shape"))
    }
}

/// `#[serde(with = "complex_scalar")]` adapter writing `[re, im]`.
pub mod complex_scalar {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

/// Compact JSON formatter printing floats as `{:.16e}`.
#[derive(Debug, Default, Clone, Copy)]
pub struct CanonicalFormatter;

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serialize with sorted keys and fixed float formatting.
pub fn to_canonical_json<T: Serialize>(value: &T) -> serde_json::Result<Vec<u8>> {
    // Round-tripping through `Value` sorts object keys.
    let v = serde_json::to_value(value)?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter);
    v.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c64;
    use std::collections::HashMap;

    #[test]
    fn matrix_layout_is_row_major() {
        let m = DMatrix::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(2.0, 0.5), c64(3.0, 0.0), c64(4.0, -1.0)]);
        let j = ComplexMatrixJson::from(&m);
        assert_eq!(j.data[1], [2.0, 0.5]);
        assert_eq!(j.to_matrix().unwrap(), m);
    }

    #[test]
    fn canonical_output_is_sorted_and_fixed_width() {
        let mut map = HashMap::new();
        map.insert("zeta", 0.1);
        map.insert("alpha", 1.0);
        let s = String::from_utf8(to_canonical_json(&map).unwrap()).unwrap();
        assert_eq!(
            s,
            "{\"alpha\":1.0000000000000000e0,\"zeta\":1.0000000000000001e-1}\n"
        );
        let back: HashMap<String, f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back["zeta"], 0.1);
    }
}
