use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use super::QrSymbol;

/// Light modules around the symbol on every side.
pub const QUIET_ZONE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Svg,
    /// Binary greymap, one pixel per module.
    Pgm,
    /// Two characters per module, `#` dark and space light.
    Ascii,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported render format {0:?}")]
pub struct UnsupportedFormat(pub String);

impl FromStr for RenderFormat {
    type Err = UnsupportedFormat;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "svg" => Ok(RenderFormat::Svg),
            "pgm" => Ok(RenderFormat::Pgm),
            "ascii" | "txt" => Ok(RenderFormat::Ascii),
            _ => Err(UnsupportedFormat(String::from(s))),
        }
    }
}

impl RenderFormat {
    pub fn content_type(self) -> &'static str {
        match self {
            RenderFormat::Svg => "image/svg+xml",
            RenderFormat::Pgm => "image/x-portable-graymap",
            RenderFormat::Ascii => "text/plain; charset=utf-8",
        }
    }
}

fn dark_at(symbol: &QrSymbol, px: usize, py: usize) -> bool {
    let side = symbol.side();
    let inside = |p: usize| (QUIET_ZONE..QUIET_ZONE + side).contains(&p);
    inside(px) && inside(py) && symbol.get(px - QUIET_ZONE, py - QUIET_ZONE)
}

pub fn render_qr(symbol: &QrSymbol, format: RenderFormat) -> Vec<u8> {
    let full = symbol.side() + 2 * QUIET_ZONE;
    match format {
        RenderFormat::Svg => {
            let mut path = String::new();
            for y in 0..symbol.side() {
                for x in 0..symbol.side() {
                    if symbol.get(x, y) {
                        if !path.is_empty() {
                            path.push(' ');
                        }
                        let _ = write!(path, "M{},{}h1v1h-1z", x + QUIET_ZONE, y + QUIET_ZONE);
                    }
                }
            }
            format!(
                "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
                 <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"0 0 {full} {full}\" shape-rendering=\"crispEdges\">\n\
                 <rect width=\"100%\" height=\"100%\" fill=\"#FFFFFF\"/>\n\
                 <path d=\"{path}\" fill=\"#000000\"/>\n\
                 </svg>\n"
            )
            .into_bytes()
        }
        RenderFormat::Pgm => {
            let mut out = format!("P5\n{full} {full}\n255\n").into_bytes();
            out.reserve(full * full);
            for py in 0..full {
                for px in 0..full {
                    out.push(if dark_at(symbol, px, py) { 0 } else { 255 });
                }
            }
            out
        }
        RenderFormat::Ascii => {
            let mut out = String::with_capacity(full * (2 * full + 1));
            for py in 0..full {
                for px in 0..full {
                    out.push_str(if dark_at(symbol, px, py) { "##" } else { "  " });
                }
                out.push('\n');
            }
            out.into_bytes()
        }
    }
}
