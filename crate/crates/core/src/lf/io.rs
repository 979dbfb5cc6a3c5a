//! Light-field files.
//!
//! Two layouts are supported:
//!
//! - a directory of binary PGM (`P5`, maxval 255) views named
//!   `view_{u}_{v}.pgm` (zero-based) next to a `meta.txt` holding the lines
//!   `U <int>`, `V <int>`, `H <int>`, `W <int>`; colour `P6` views are accepted
//!   on load and converted to luma;
//! - a packed `.lf` file: the magic `LFT1`, little-endian `u32` extents
//!   `U V C H W`, then `U*V*C*H*W` little-endian `f32` samples in
//!   `(u, v, c, y, x)` row-major order.
//!
//! Samples are clamped to `[0, 1]` on save.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{luma, LightField};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PACKED_MAGIC: &[u8; 4] = b"LFT1";

/// Packed file if `path` ends in `.lf`, otherwise a PGM view directory.
pub fn save_lf(lf: &LightField, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "lf") {
        save_packed(lf, path)
    } else {
        save_pgm_dir(lf, path)
    }
}

/// Loads a PGM view directory or a packed file.
pub fn load_lf(path: &Path) -> Result<LightField> {
    if path.is_dir() {
        load_pgm_dir(path)
    } else {
        load_packed(path)
    }
}

pub fn encode_packed(lf: &LightField) -> Vec<u8> {
    let s = lf.samples().shape();
    let mut buf = Vec::with_capacity(24 + 4 * lf.samples().len());
    buf.extend_from_slice(PACKED_MAGIC);
    for &d in s {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in lf.samples().data() {
        buf.extend_from_slice(&(v.clamp(0.0, 1.0) as f32).to_le_bytes());
    }
    buf
}

pub fn decode_packed(bytes: &[u8]) -> Result<LightField> {
    if bytes.len() < 4 || &bytes[..4] != PACKED_MAGIC {
        return Err(Error::format("bad magic at offset 0: expected \"LFT1\""));
    }
    if bytes.len() < 24 {
        return Err(Error::format(format!("header truncated at offset {}", bytes.len())));
    }
    let mut dims = [0usize; 5];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 4 + 4 * i;
        *d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if *d == 0 {
            return Err(Error::format(format!("zero extent at offset {off}")));
        }
    }
    let n: usize = dims.iter().product();
    let expected = 24 + 4 * n;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "payload size mismatch: expected {expected} bytes for extents {dims:?}, file has {} (offset {})",
            bytes.len(),
            bytes.len().min(expected)
        )));
    }
    let mut data = Vec::with_capacity(n);
    for (i, chunk) in bytes[24..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(format!("non-finite sample at offset {}", 24 + 4 * i)));
        }
        data.push((v as f64).clamp(0.0, 1.0));
    }
    LightField::new(Tensor::new(dims.to_vec(), data)?)
}

pub fn save_packed(lf: &LightField, path: &Path) -> Result<()> {
    fs::write(path, encode_packed(lf))?;
    Ok(())
}

pub fn load_packed(path: &Path) -> Result<LightField> {
    decode_packed(&fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// 8-bit quantization used by the PGM path.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_pgm(path: &Path, h: usize, w: usize, samples: &[f64]) -> Result<()> {
    if samples.len() != h * w {
        return Err(Error::shape(format!("{} samples for a {h}x{w} PGM", samples.len())));
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{w} {h}\n255\n")?;
    f.write_all(&samples.iter().map(|&v| to_u8(v)).collect::<Vec<_>>())?;
    Ok(())
}

/// Netpbm image: `(height, width, channels, samples in [0, 1])`.
pub fn read_pnm(bytes: &[u8], name: &str) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(format!("{name}: truncated header at offset {pos}")));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the raster
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::format(format!("{name}: bad magic {m:?} at offset 0"))),
    };
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::format(format!("{name}: bad {what} {s:?}")))
    };
    let w = parse(&fields[1], "width")?;
    let h = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(Error::format(format!("{name}: maxval {maxval}, expected 255")));
    }
    let n = w * h * channels;
    if w == 0 || h == 0 || bytes.len() < pos + n {
        return Err(Error::format(format!("{name}: raster truncated at offset {} (need {n} bytes)", bytes.len())));
    }
    let raster = &bytes[pos..pos + n];
    let samples = if channels == 1 {
        raster.iter().map(|&b| b as f64 / 255.0).collect()
    } else {
        raster.chunks_exact(3).map(|p| luma(p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0)).collect()
    };
    Ok((h, w, channels, samples))
}

pub fn view_name(u: usize, v: usize) -> String {
    format!("view_{u}_{v}.pgm")
}

pub fn save_pgm_dir(lf: &LightField, dir: &Path) -> Result<()> {
    if lf.channels() != 1 {
        return Err(Error::format(format!("PGM views hold one channel, light field has {}", lf.channels())));
    }
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("meta.txt"),
        format!("U {}\nV {}\nH {}\nW {}\n", lf.u_views(), lf.v_views(), lf.height(), lf.width()),
    )?;
    for u in 0..lf.u_views() {
        for v in 0..lf.v_views() {
            write_pgm(&dir.join(view_name(u, v)), lf.height(), lf.width(), lf.view_slice(u, v))?;
        }
    }
    Ok(())
}

fn read_meta(dir: &Path) -> Result<[usize; 4]> {
    let text = fs::read_to_string(dir.join("meta.txt"))
        .map_err(|e| Error::format(format!("{}: cannot read meta.txt: {e}", dir.display())))?;
    let mut vals = [None; 4];
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let mut it = line.split_whitespace();
        let (Some(k), Some(v), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::format(format!("meta.txt: malformed line {line:?}")));
        };
        let slot = match k {
            "U" => 0,
            "V" => 1,
            "H" => 2,
            "W" => 3,
            _ => return Err(Error::format(format!("meta.txt: unknown key {k:?}"))),
        };
        let n: usize = v.parse().map_err(|_| Error::format(format!("meta.txt: bad value {v:?} for {k}")))?;
        if n == 0 {
            return Err(Error::format(format!("meta.txt: {k} must be positive")));
        }
        vals[slot] = Some(n);
    }
    let names = ["U", "V", "H", "W"];
    let mut out = [0; 4];
    for i in 0..4 {
        out[i] = vals[i].ok_or_else(|| Error::format(format!("meta.txt: missing {}", names[i])))?;
    }
    Ok(out)
}

pub fn load_pgm_dir(dir: &Path) -> Result<LightField> {
    let [nu, nv, h, w] = read_meta(dir)?;
    let missing: Vec<String> = (0..nu)
        .flat_map(|u| (0..nv).map(move |v| view_name(u, v)))
        .filter(|n| !dir.join(n).is_file() && !dir.join(n.replace(".pgm", ".ppm")).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::format(format!("{}: missing view(s) {}", dir.display(), missing.join(", "))));
    }
    let mut data = Vec::with_capacity(nu * nv * h * w);
    for u in 0..nu {
        for v in 0..nv {
            let name = view_name(u, v);
            let path = if dir.join(&name).is_file() { dir.join(&name) } else { dir.join(name.replace(".pgm", ".ppm")) };
            let (vh, vw, _, samples) = read_pnm(&fs::read(&path)?, &name)?;
            if (vh, vw) != (h, w) {
                return Err(Error::format(format!("{name}: extents {vh}x{vw} disagree with meta.txt {h}x{w}")));
            }
            data.extend(samples);
        }
    }
    LightField::new(Tensor::new(vec![nu, nv, 1, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_rejects_bad_magic_and_truncation() {
        let lf = LightField::from_fn([1, 1, 1, 2, 2], |_| 0.25).unwrap();
        let mut bytes = encode_packed(&lf);
        assert_eq!(decode_packed(&bytes).unwrap(), lf);
        bytes.pop();
        assert!(decode_packed(&bytes).unwrap_err().to_string().contains("offset"));
        bytes[0] = b'X';
        assert!(decode_packed(&bytes).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn pnm_header_with_comment() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let (h, w, c, s) = read_pnm(&bytes, "t").unwrap();
        assert_eq!((h, w, c), (1, 2, 1));
        assert_eq!(s, vec![0.0, 1.0]);
    }

    #[test]
    fn ppm_converts_to_luma() {
        let mut bytes = b"P6 1 1 255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0]);
        let (_, _, c, s) = read_pnm(&bytes, "t").unwrap();
        assert_eq!(c, 3);
        assert!((s[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn quantization_of_half() {
        assert_eq!(to_u8(0.5), 128);
        assert_eq!(to_u8(-1.0), 0);
        assert_eq!(to_u8(2.0), 255);
    }
}
