//! JSON layout of matrices, systems, controllers, certificates and `θ̂`.
//!
//! A matrix is `{"rows": r, "cols": c, "data": [...]}` with `data` in
//! row-major order. Systems are objects of named blocks. Blocks left out of
//! a plant or system are zero, sized from the blocks that are present.

use std::collections::BTreeMap;

use dissipic_core::linalg::{self, Mat};
use dissipic_core::models::{Activation, RinnController, StorageCertificate, UncertainLtiPlant, UncertainLtiSystem};
use dissipic_core::synthesize::{ThetaHat, THETA_HAT_BLOCK_NAMES};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatJson {
    pub fn from_mat(m: &Mat) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_mat(&self) -> Result<Mat, String> {
        if self.data.len() != self.rows * self.cols {
            return Err(format!("matrix declares {}x{} but has {} entries", self.rows, self.cols, self.data.len()));
        }
        Ok(Mat::from_row_slice(self.rows, self.cols, &self.data))
    }
}

fn mat_value(m: &Mat) -> Value {
    serde_json::to_value(MatJson::from_mat(m)).expect("matrix serializes")
}

fn parse_mat(name: &str, v: &Value) -> Result<Mat, String> {
    let mj: MatJson = serde_json::from_value(v.clone()).map_err(|e| format!("block {name}: {e}"))?;
    mj.to_mat().map_err(|e| format!("block {name}: {e}"))
}

/// Block name with the symbolic dimensions of its rows and columns.
type Schema = [(&'static str, char, char)];

const PLANT: &Schema = &[
    ("A_p", 'p', 'p'),
    ("B_pw", 'p', 'w'),
    ("B_pd", 'p', 'd'),
    ("B_pu", 'p', 'u'),
    ("C_pv", 'v', 'p'),
    ("D_pvw", 'v', 'w'),
    ("D_pvd", 'v', 'd'),
    ("D_pvu", 'v', 'u'),
    ("C_pe", 'e', 'p'),
    ("D_pew", 'e', 'w'),
    ("D_ped", 'e', 'd'),
    ("D_peu", 'e', 'u'),
    ("C_py", 'y', 'p'),
    ("D_pyw", 'y', 'w'),
    ("D_pyd", 'y', 'd'),
];

const SYSTEM: &Schema = &[
    ("A", 'n', 'n'),
    ("B_w", 'n', 'w'),
    ("B_d", 'n', 'd'),
    ("C_v", 'v', 'n'),
    ("D_vw", 'v', 'w'),
    ("D_vd", 'v', 'd'),
    ("C_e", 'e', 'n'),
    ("D_ew", 'e', 'w'),
    ("D_ed", 'e', 'd'),
];

pub const CONTROLLER_BLOCK_NAMES: [&str; 9] = ["A_k", "B_kw", "B_ky", "C_kv", "D_kvw", "D_kvy", "C_ku", "D_kuw", "D_kuy"];

const CONTROLLER: &Schema = &[
    ("A_k", 'k', 'k'),
    ("B_kw", 'k', 'f'),
    ("B_ky", 'k', 'y'),
    ("C_kv", 'f', 'k'),
    ("D_kvw", 'f', 'f'),
    ("D_kvy", 'f', 'y'),
    ("C_ku", 'u', 'k'),
    ("D_kuw", 'u', 'f'),
    ("D_kuy", 'u', 'y'),
];

/// Parses the blocks of `schema` from `obj`, filling absent ones with zeros.
fn parse_blocks(obj: &Map<String, Value>, schema: &Schema, what: &str) -> Result<Vec<Mat>, String> {
    let mut dims: BTreeMap<char, usize> = BTreeMap::new();
    let mut given = Vec::with_capacity(schema.len());
    for &(name, r, c) in schema {
        let m = obj.get(name).map(|v| parse_mat(name, v)).transpose()?;
        if let Some(m) = &m {
            for (sym, n) in [(r, m.nrows()), (c, m.ncols())] {
                match dims.insert(sym, n) {
                    Some(prev) if prev != n => {
                        return Err(format!("{what} block {name} has a dimension of {n} where other blocks imply {prev}"));
                    }
                    _ => {}
                }
            }
        }
        given.push(m);
    }
    let known: Vec<&str> = schema.iter().map(|s| s.0).collect();
    if let Some(k) = obj.keys().find(|k| !known.contains(&k.as_str()) && k.as_str() != "activation" && k.as_str() != "meta") {
        return Err(format!("unknown {what} block {k}"));
    }
    Ok(given
        .into_iter()
        .zip(schema)
        .map(|(m, &(_, r, c))| m.unwrap_or_else(|| Mat::zeros(dims.get(&r).copied().unwrap_or(0), dims.get(&c).copied().unwrap_or(0))))
        .collect())
}

fn as_object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>, String> {
    v.as_object().ok_or_else(|| format!("{what} must be a JSON object"))
}

pub fn plant_from_json(v: &Value) -> Result<UncertainLtiPlant, String> {
    let blocks = parse_blocks(as_object(v, "plant")?, PLANT, "plant")?;
    let mut p = UncertainLtiPlant::zeros(Default::default());
    for ((_, dst), m) in p.named_blocks_mut().into_iter().zip(blocks) {
        *dst = m;
    }
    p.validate().map_err(|e| e.to_string())?;
    Ok(p)
}

pub fn plant_to_json(p: &UncertainLtiPlant) -> Value {
    Value::Object(p.named_blocks().iter().map(|(n, m)| (n.to_string(), mat_value(m))).collect())
}

pub fn system_from_json(v: &Value) -> Result<UncertainLtiSystem, String> {
    let blocks = parse_blocks(as_object(v, "system")?, SYSTEM, "system")?;
    let mut s = UncertainLtiSystem::zeros(Default::default());
    for ((_, dst), m) in s.named_blocks_mut().into_iter().zip(blocks) {
        *dst = m;
    }
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

pub fn system_to_json(s: &UncertainLtiSystem) -> Value {
    Value::Object(s.named_blocks().iter().map(|(n, m)| (n.to_string(), mat_value(m))).collect())
}

pub fn controller_from_json(v: &Value) -> Result<RinnController, String> {
    let obj = as_object(v, "controller")?;
    if let Some(missing) = CONTROLLER_BLOCK_NAMES.iter().find(|n| !obj.contains_key(**n)) {
        return Err(format!("controller block {missing} is missing"));
    }
    let blocks = parse_blocks(obj, CONTROLLER, "controller")?;
    let activation = match obj.get("activation") {
        None => Activation::Tanh,
        Some(Value::String(s)) => Activation::from_name(s).map_err(|e| e.to_string())?,
        Some(_) => return Err("activation must be a string".into()),
    };
    let mut k = RinnController::zeros(Default::default(), activation);
    for (dst, m) in k.blocks_mut().into_iter().zip(blocks) {
        *dst = m;
    }
    k.validate().map_err(|e| e.to_string())?;
    Ok(k)
}

pub fn controller_to_json(k: &RinnController, meta: &Value) -> Value {
    let mut obj = Map::new();
    obj.insert("meta".into(), meta.clone());
    for (n, m) in CONTROLLER_BLOCK_NAMES.iter().zip(k.blocks()) {
        obj.insert(n.to_string(), mat_value(m));
    }
    obj.insert("activation".into(), Value::String(k.activation.name().into()));
    Value::Object(obj)
}

pub fn certificate_to_json(c: &StorageCertificate, meta: &Value) -> Value {
    let mut obj = Map::new();
    obj.insert("meta".into(), meta.clone());
    obj.insert("P".into(), mat_value(&c.p));
    obj.insert("Lambda".into(), mat_value(&linalg::diag(&c.lambda)));
    obj.insert("lambda_p".into(), Value::from(c.lambda_p));
    obj.insert("feasibility_residual".into(), Value::from(c.feasibility_residual));
    Value::Object(obj)
}

pub fn certificate_from_json(v: &Value) -> Result<StorageCertificate, String> {
    let obj = as_object(v, "certificate")?;
    let get = |k: &str| obj.get(k).ok_or_else(|| format!("certificate field {k} is missing"));
    let p = parse_mat("P", get("P")?)?;
    let l = parse_mat("Lambda", get("Lambda")?)?;
    let num = |k: &str| get(k)?.as_f64().ok_or_else(|| format!("certificate field {k} must be a number"));
    Ok(StorageCertificate {
        p,
        lambda: l.diagonal().iter().copied().collect(),
        lambda_p: num("lambda_p")?,
        feasibility_residual: num("feasibility_residual")?,
    })
}

pub fn theta_hat_to_json(th: &ThetaHat, meta: &Value) -> Value {
    let mut obj = Map::new();
    obj.insert("meta".into(), meta.clone());
    for (n, m) in THETA_HAT_BLOCK_NAMES.iter().zip(th.blocks()) {
        obj.insert(n.to_string(), mat_value(&m));
    }
    Value::Object(obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dissipic_core::linalg::mat;
    use dissipic_core::models::ControllerDims;
    use serde_json::json;

    #[test]
    fn matrix_is_row_major() {
        let m = mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let j = MatJson::from_mat(&m);
        assert_eq!(j.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(j.to_mat().unwrap(), m);
        assert!(MatJson { rows: 2, cols: 2, data: vec![1.0] }.to_mat().is_err());
    }

    #[test]
    fn missing_system_blocks_are_zero() {
        let v = json!({
            "A": {"rows": 1, "cols": 1, "data": [1.0]},
            "B_d": {"rows": 1, "cols": 2, "data": [1.0, 0.0]},
            "C_e": {"rows": 1, "cols": 1, "data": [1.0]}
        });
        let s = system_from_json(&v).unwrap();
        assert_eq!(s.d_ed.shape(), (1, 2));
        assert_eq!(s.c_v.shape(), (0, 1));
    }

    #[test]
    fn inconsistent_block_sizes_are_rejected() {
        let v = json!({
            "A": {"rows": 2, "cols": 2, "data": [1.0, 0.0, 0.0, 1.0]},
            "C_e": {"rows": 1, "cols": 1, "data": [1.0]}
        });
        assert!(system_from_json(&v).unwrap_err().contains("C_e"));
        assert!(system_from_json(&json!({"A_x": {"rows": 0, "cols": 0, "data": []}})).is_err());
    }

    #[test]
    fn controller_round_trip() {
        let mut k = RinnController::zeros(ControllerDims { n_k: 2, n_phi: 3, n_y: 1, n_u: 1 }, Activation::Relu);
        for (i, b) in k.blocks_mut().into_iter().enumerate() {
            b.iter_mut().enumerate().for_each(|(j, x)| *x = (i * 10 + j) as f64);
        }
        let v = controller_to_json(&k, &Value::Null);
        for n in CONTROLLER_BLOCK_NAMES {
            assert!(v.get(n).is_some());
        }
        assert_eq!(controller_from_json(&v).unwrap(), k);
    }

    #[test]
    fn certificate_round_trip() {
        let c = StorageCertificate { p: mat(2, 2, &[2.0, 0.5, 0.5, 1.0]), lambda: vec![0.3], lambda_p: 1.0, feasibility_residual: -1e-3 };
        let v = certificate_to_json(&c, &Value::Null);
        assert_eq!(certificate_from_json(&v).unwrap(), c);
    }
}
