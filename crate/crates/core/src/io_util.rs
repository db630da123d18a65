//! Little-endian scalar readers and writers for the binary formats.

use std::io::{self, Read, Write};

pub fn write_u8(w: &mut dyn Write, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub fn write_u16(w: &mut dyn Write, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_u32(w: &mut dyn Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_u64(w: &mut dyn Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f32(w: &mut dyn Write, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f64(w: &mut dyn Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_str(w: &mut dyn Write, s: &str) -> io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_array<const N: usize>(r: &mut dyn Read) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_u8(r: &mut dyn Read) -> io::Result<u8> {
    Ok(read_array::<1>(r)?[0])
}

pub fn read_u16(r: &mut dyn Read) -> io::Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

pub fn read_u32(r: &mut dyn Read) -> io::Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub fn read_u64(r: &mut dyn Read) -> io::Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub fn read_f32(r: &mut dyn Read) -> io::Result<f32> {
    Ok(f32::from_le_bytes(read_array(r)?))
}

pub fn read_f64(r: &mut dyn Read) -> io::Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub fn read_str(r: &mut dyn Read) -> io::Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "string too long"));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
