//! PNG reading and writing for the artifact formats: 8-bit indexed PNGs for
//! class/category maps (palette index = class id) and 8-bit RGB PNGs for
//! images. Encoding settings are fixed so identical inputs produce identical
//! bytes.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PngError {
    #[error("png io: {0}")]
    Io(#[from] std::io::Error),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unexpected png format in {0}: {1}")]
    Format(String, String),
}

/// Writes an 8-bit indexed PNG; `palette` maps each index to an RGB triple.
pub fn write_indexed(
    path: &Path,
    width: usize,
    height: usize,
    indices: &[u8],
    palette: &[[u8; 3]],
) -> Result<(), PngError> {
    assert_eq!(indices.len(), width * height);
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Default);
    let flat: Vec<u8> = palette.iter().flatten().copied().collect();
    enc.set_palette(flat);
    let mut writer = enc.write_header()?;
    writer.write_image_data(indices)?;
    Ok(())
}

/// Reads an 8-bit indexed PNG back to (width, height, indices).
pub fn read_indexed(path: &Path) -> Result<(usize, usize, Vec<u8>), PngError> {
    let decoder = png::Decoder::new(File::open(path)?);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(PngError::Format(
            path.display().to_string(),
            format!("expected 8-bit indexed, got {:?}/{:?}", info.color_type, info.bit_depth),
        ));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

/// Writes an 8-bit RGB PNG from row-major RGB bytes.
pub fn write_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), PngError> {
    assert_eq!(rgb.len(), width * height * 3);
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Default);
    let mut writer = enc.write_header()?;
    writer.write_image_data(rgb)?;
    Ok(())
}

/// Reads an 8-bit RGB PNG back to (width, height, rgb bytes).
pub fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<u8>), PngError> {
    let decoder = png::Decoder::new(File::open(path)?);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(PngError::Format(
            path.display().to_string(),
            format!("expected 8-bit rgb, got {:?}/{:?}", info.color_type, info.bit_depth),
        ));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}
