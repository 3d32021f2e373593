//! Binary PPM (P6) frames and PGM (P5) label maps, 8 bits per sample.

use std::fs;
use std::path::Path;

use inst4dgs_core::image::{Image, LabelMap};

use crate::error::{Error, Result};

fn header(kind: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{kind}\n{w} {h}\n255\n").into_bytes()
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = header("P6", img.width, img.height);
    out.extend(img.to_bytes());
    out
}

pub fn encode_pgm(map: &LabelMap) -> Vec<u8> {
    let mut out = header("P5", map.width, map.height);
    out.extend(&map.labels);
    out
}

/// Splits a netpbm header into its four tokens and the raster.
fn parse<'a>(bytes: &'a [u8], magic: &str, path: &Path) -> Result<(usize, usize, &'a [u8])> {
    let mut tokens = Vec::with_capacity(4);
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(path, "truncated header"));
        }
        tokens.push(
            std::str::from_utf8(&bytes[start..i])
                .map_err(|_| Error::format(path, "non-ASCII header"))?,
        );
    }
    // exactly one whitespace byte separates the header from the raster
    i += 1;
    if tokens[0] != magic {
        return Err(Error::format(
            path,
            format!("expected {magic}, found {}", tokens[0]),
        ));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad header number {s:?}")))
    };
    let (w, h, max) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if max != 255 {
        return Err(Error::format(path, "only 8-bit samples are supported"));
    }
    Ok((w, h, bytes.get(i..).unwrap_or(&[])))
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Image> {
    let (w, h, raster) = parse(bytes, "P6", path)?;
    if raster.len() != w * h * 3 {
        return Err(Error::format(path, "raster size does not match header"));
    }
    Ok(Image::from_bytes(w, h, raster)?)
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    let (w, h, raster) = parse(bytes, "P5", path)?;
    if raster.len() != w * h {
        return Err(Error::format(path, "raster size does not match header"));
    }
    Ok(LabelMap::from_labels(w, h, raster.to_vec())?)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?, path)
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let img = Image::from_bytes(
            3,
            2,
            &[
                0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 255, 1, 2, 3, 4, 5, 6,
            ],
        )
        .unwrap();
        let p = Path::new("x.ppm");
        assert_eq!(decode_ppm(&encode_ppm(&img), p).unwrap(), img);
        let map = LabelMap::from_labels(2, 2, vec![0, 1, 255, 3]).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&map), p).unwrap(), map);
        assert!(decode_pgm(&encode_ppm(&img), p).is_err());
        let mut trunc = encode_pgm(&map);
        trunc.pop();
        assert!(decode_pgm(&trunc, p).is_err());
        let commented = b"P5\n# note\n2 1\n255\n\x01\x02";
        assert_eq!(decode_pgm(commented, p).unwrap().labels, vec![1, 2]);
    }
}
