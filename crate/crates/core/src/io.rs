//! File formats: varifold and trajectory JSON, OBJ triangle meshes, CSV polylines.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which round-trips
//! every finite `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::shooting::{ShootingState, Trajectory};
use crate::varifold::DiscreteVarifold;

pub const VARIFOLD_FORMAT: &str = "varifold-v1";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn push_float(out: &mut String, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite("value to serialize".into()));
    }
    write!(out, "{v:.16e}").expect("write to string");
    Ok(())
}

fn push_array(out: &mut String, vals: &[f64]) -> Result<()> {
    out.push('[');
    for (i, &v) in vals.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        push_float(out, v)?;
    }
    out.push(']');
    Ok(())
}

pub fn varifold_to_string(mu: &DiscreteVarifold) -> Result<String> {
    let (n, d) = (mu.n(), mu.d());
    let mut s = format!("{{\n  \"format\": \"{VARIFOLD_FORMAT}\",\n  \"n\": {n},\n  \"d\": {d},\n  \"atoms\": [");
    for i in 0..mu.len() {
        s.push_str(if i == 0 { "\n    {\"x\": " } else { ",\n    {\"x\": " });
        push_array(&mut s, mu.position(i))?;
        s.push_str(", \"U\": [");
        for (k, u) in mu.frame(i).chunks(n).enumerate() {
            if k > 0 {
                s.push_str(", ");
            }
            push_array(&mut s, u)?;
        }
        s.push_str("]}");
    }
    s.push_str(if mu.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" });
    Ok(s)
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    let map = obj.as_object().ok_or_else(|| Error::schema(path_or_root(path), "expected an object"))?;
    map.get(key).ok_or_else(|| Error::schema(join(path, key), "missing key"))
}

fn path_or_root(path: &str) -> String {
    if path.is_empty() { "$".into() } else { path.into() }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() { key.into() } else { format!("{path}.{key}") }
}

fn as_usize(v: &Value, path: &str) -> Result<usize> {
    v.as_u64().map(|u| u as usize).ok_or_else(|| Error::schema(path, "expected a nonnegative integer"))
}

fn as_array<'a>(v: &'a Value, path: &str, len: Option<usize>) -> Result<&'a Vec<Value>> {
    let a = v.as_array().ok_or_else(|| Error::schema(path, "expected an array"))?;
    if let Some(len) = len {
        if a.len() != len {
            return Err(Error::schema(path, format!("expected {len} entries, found {}", a.len())));
        }
    }
    Ok(a)
}

fn numbers(v: &Value, path: &str, len: Option<usize>, out: &mut Vec<f64>) -> Result<()> {
    for (i, e) in as_array(v, path, len)?.iter().enumerate() {
        out.push(e.as_f64().ok_or_else(|| Error::schema(format!("{path}[{i}]"), "expected a number"))?);
    }
    Ok(())
}

pub fn varifold_from_str(text: &str) -> Result<DiscreteVarifold> {
    let doc: Value = serde_json::from_str(text)?;
    let format = field(&doc, "format", "")?;
    if format.as_str() != Some(VARIFOLD_FORMAT) {
        return Err(Error::schema("format", format!("expected \"{VARIFOLD_FORMAT}\"")));
    }
    let n = as_usize(field(&doc, "n", "")?, "n")?;
    let d = as_usize(field(&doc, "d", "")?, "d")?;
    if n == 0 || d == 0 || d > n {
        return Err(Error::schema("d", format!("need 1 <= d <= n, got n={n}, d={d}")));
    }
    let atoms = as_array(field(&doc, "atoms", "")?, "atoms", None)?;
    let mut data = Vec::with_capacity(atoms.len() * n * (d + 1));
    for (i, atom) in atoms.iter().enumerate() {
        let p = format!("atoms[{i}]");
        numbers(field(atom, "x", &p)?, &format!("{p}.x"), Some(n), &mut data)?;
        let up = format!("{p}.U");
        for (k, row) in as_array(field(atom, "U", &p)?, &up, Some(d))?.iter().enumerate() {
            numbers(row, &format!("{up}[{k}]"), Some(n), &mut data)?;
        }
    }
    DiscreteVarifold::from_flat(n, d, data)
}

pub fn write_varifold(mu: &DiscreteVarifold, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &varifold_to_string(mu)?)
}

pub fn read_varifold(path: impl AsRef<Path>) -> Result<DiscreteVarifold> {
    varifold_from_str(&read_text(path.as_ref())?)
}

/// `{"steps": S, "n": n, "d": d, "states": [{"t", "q", "p"}]}`.
pub fn trajectory_to_string(traj: &Trajectory) -> Result<String> {
    let s0 = traj.initial();
    let mut s = format!("{{\n  \"steps\": {},\n  \"n\": {},\n  \"d\": {},\n  \"states\": [", traj.steps, s0.n(), s0.d());
    for (k, (st, t)) in traj.states.iter().zip(traj.times()).enumerate() {
        s.push_str(if k == 0 { "\n    {\"t\": " } else { ",\n    {\"t\": " });
        push_float(&mut s, t)?;
        s.push_str(", \"q\": ");
        push_array(&mut s, &st.q)?;
        s.push_str(", \"p\": ");
        push_array(&mut s, &st.p)?;
        s.push('}');
    }
    s.push_str("\n  ]\n}\n");
    Ok(s)
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &trajectory_to_string(traj)?)
}

/// Sampled states of a trajectory file, as `(t, state)` pairs.
pub fn trajectory_from_str(text: &str) -> Result<(usize, Vec<(f64, ShootingState)>)> {
    let doc: Value = serde_json::from_str(text)?;
    let steps = as_usize(field(&doc, "steps", "")?, "steps")?;
    let n = as_usize(field(&doc, "n", "")?, "n")?;
    let d = as_usize(field(&doc, "d", "")?, "d")?;
    let states = as_array(field(&doc, "states", "")?, "states", Some(steps + 1))?;
    let mut out = Vec::with_capacity(states.len());
    for (k, st) in states.iter().enumerate() {
        let p = format!("states[{k}]");
        let t = field(st, "t", &p)?.as_f64().ok_or_else(|| Error::schema(format!("{p}.t"), "expected a number"))?;
        let (mut q, mut m) = (Vec::new(), Vec::new());
        numbers(field(st, "q", &p)?, &format!("{p}.q"), None, &mut q)?;
        numbers(field(st, "p", &p)?, &format!("{p}.p"), None, &mut m)?;
        out.push((t, ShootingState::new(n, d, q, m)?));
    }
    Ok((steps, out))
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<(usize, Vec<(f64, ShootingState)>)> {
    trajectory_from_str(&read_text(path.as_ref())?)
}

/// Pretty JSON for reports and summaries.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path.as_ref(), &text)
}

/// A cell complex to be converted into one Dirac per cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Mesh {
    /// Vertices in ℝ³ and 0-based triangles.
    Triangles { vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]> },
    /// Open polylines; consecutive vertices form segments.
    Polylines { dim: usize, components: Vec<Vec<Vec<f64>>> },
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.into(), line, message: message.into() }
}

/// Parses the `v` and `f` records of a Wavefront OBJ file; other records are ignored.
pub fn parse_obj(text: &str, source: &str) -> Result<Mesh> {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f64> = tok
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(source, line, format!("bad coordinate `{t}`"))))
                    .collect::<Result<_>>()?;
                if !(3..=4).contains(&c.len()) {
                    return Err(parse_err(source, line, "vertex needs 3 coordinates"));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(parse_err(source, line, "non-finite coordinate"));
                }
                vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<i64> = tok
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<i64>().map_err(|_| parse_err(source, line, format!("bad vertex reference `{t}`")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(parse_err(source, line, format!("only triangles are supported, face has {} vertices", idx.len())));
                }
                let mut f = [0usize; 3];
                for (slot, &i) in f.iter_mut().zip(&idx) {
                    let count = vertices.len() as i64;
                    let resolved = if i > 0 { i - 1 } else { count + i };
                    if i == 0 || resolved < 0 || resolved >= count {
                        return Err(parse_err(source, line, format!("vertex index {i} out of range (1..={count})")));
                    }
                    *slot = resolved as usize;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    Ok(Mesh::Triangles { vertices, faces })
}

/// One vertex per row, comma-separated coordinates; blank lines separate components.
pub fn parse_polyline_csv(text: &str, source: &str) -> Result<Mesh> {
    let mut components: Vec<Vec<Vec<f64>>> = vec![Vec::new()];
    let mut dim = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.trim();
        if content.is_empty() {
            if !components.last().expect("nonempty").is_empty() {
                components.push(Vec::new());
            }
            continue;
        }
        if content.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = content
            .split(',')
            .map(|t| {
                let t = t.trim();
                t.parse::<f64>().map_err(|_| parse_err(source, line, format!("bad coordinate `{t}`")))
            })
            .collect::<Result<_>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(source, line, "non-finite coordinate"));
        }
        match dim {
            None => dim = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(parse_err(source, line, format!("expected {n} coordinates, found {}", row.len())));
            }
            _ => {}
        }
        components.last_mut().expect("nonempty").push(row);
    }
    components.retain(|c| !c.is_empty());
    let dim = dim.ok_or_else(|| parse_err(source, 0, "no vertices"))?;
    if dim < 1 {
        return Err(parse_err(source, 1, "empty coordinate row"));
    }
    Ok(Mesh::Polylines { dim, components })
}

/// Reads a mesh, choosing the parser from the extension (`.obj`, otherwise CSV).
pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let name = path.display().to_string();
    let is_obj = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("obj"));
    if is_obj {
        parse_obj(&text, &name)
    } else {
        parse_polyline_csv(&text, &name)
    }
}

/// One Dirac per cell: centroid, cell frame, weight = cell area or length.
pub fn mesh_to_varifold(mesh: &Mesh) -> Result<DiscreteVarifold> {
    match mesh {
        Mesh::Triangles { vertices, faces } => {
            let mut mu = DiscreteVarifold::new(3, 2)?;
            // |e1 ∧ e2| is twice the area, so both edges scale by 1/√2.
            let s = std::f64::consts::FRAC_1_SQRT_2;
            for f in faces {
                let [a, b, c] = f.map(|i| vertices[i]);
                let x: Vec<f64> = (0..3).map(|k| (a[k] + b[k] + c[k]) / 3.0).collect();
                let mut frame = Vec::with_capacity(6);
                frame.extend((0..3).map(|k| s * (b[k] - a[k])));
                frame.extend((0..3).map(|k| s * (c[k] - a[k])));
                mu.push(&x, &frame)?;
            }
            Ok(mu)
        }
        Mesh::Polylines { dim, components } => {
            let n = *dim;
            let mut mu = DiscreteVarifold::new(n, 1)?;
            for comp in components {
                for w in comp.windows(2) {
                    let x: Vec<f64> = (0..n).map(|k| 0.5 * (w[0][k] + w[1][k])).collect();
                    let e: Vec<f64> = (0..n).map(|k| w[1][k] - w[0][k]).collect();
                    mu.push(&x, &e)?;
                }
            }
            Ok(mu)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::varifold::total_mass;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn varifold_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..7 * 9).map(|_| rng.gen_range(-1e3..1e3) * rng.gen::<f64>().powi(7)).collect();
        let mu = DiscreteVarifold::from_flat(3, 2, data).unwrap();
        let back = varifold_from_str(&varifold_to_string(&mu).unwrap()).unwrap();
        assert!(back.as_flat().iter().zip(mu.as_flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let empty = DiscreteVarifold::new(2, 1).unwrap();
        assert_eq!(varifold_from_str(&varifold_to_string(&empty).unwrap()).unwrap(), empty);
    }

    #[test]
    fn schema_errors_name_the_path() {
        let missing = r#"{"format":"varifold-v1","n":2,"atoms":[]}"#;
        match varifold_from_str(missing) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "d"),
            other => panic!("{other:?}"),
        }
        let short = r#"{"format":"varifold-v1","n":2,"d":1,"atoms":[{"x":[0,0],"U":[[1,0]]},{"x":[0,0],"U":[[1]]}]}"#;
        match varifold_from_str(short) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "atoms[1].U[0]"),
            other => panic!("{other:?}"),
        }
        let wrong = r#"{"format":"v2","n":2,"d":1,"atoms":[]}"#;
        assert!(matches!(varifold_from_str(wrong), Err(Error::Schema { .. })));
        assert!(matches!(varifold_from_str("{"), Err(Error::Json(_))));
    }

    #[test]
    fn unit_square_has_unit_mass() {
        let obj = "# square\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1 2 3\nf 1/1/1 3/3/1 4/4/1\n";
        let mu = mesh_to_varifold(&parse_obj(obj, "sq.obj").unwrap()).unwrap();
        assert_eq!(mu.len(), 2);
        assert!((total_mass(&mu) - 1.0).abs() < 1e-15);
        assert!((mu.position(0)[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn segment_example() {
        let mu = mesh_to_varifold(&parse_polyline_csv("0,0\n3,4\n", "s.csv").unwrap()).unwrap();
        assert_eq!(mu.as_flat(), &[1.5, 2.0, 3.0, 4.0]);
        assert_eq!(mu.weight(0), 5.0);
        let two = parse_polyline_csv("0,0\n1,0\n\n\n5,5\n5,6\n5,8\n", "t.csv").unwrap();
        assert_eq!(mesh_to_varifold(&two).unwrap().len(), 3);
    }

    #[test]
    fn mesh_errors_carry_line_numbers() {
        match parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n", "q.obj") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        match parse_obj("v 0 0 0\nf 1 2 3\n", "q.obj") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_polyline_csv("0,0\n1,x\n", "c.csv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_polyline_csv("0,0\n1,1,1\n", "c.csv").is_err());
        let neg = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", "n.obj").unwrap();
        assert_eq!(neg, Mesh::Triangles { vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], faces: vec![[0, 1, 2]] });
    }
}
