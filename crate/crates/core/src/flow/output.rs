use std::fs;
use std::path::PathBuf;

use serde_json::json;

use super::{CurveState, FlowError, FrameSink};

pub fn frame_json(index: usize, state: &CurveState) -> serde_json::Value {
    json!({
        "frame": index,
        "t": state.t,
        "perimeter": state.perimeter,
        "area": state.area,
        "points": state.points,
    })
}

pub fn frame_svg(state: &CurveState) -> String {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &state.points {
        for i in 0..2 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let pad = 0.05 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let (w, h) = (hi[0] - lo[0] + 2.0 * pad, hi[1] - lo[1] + 2.0 * pad);
    // SVG y runs downward.
    let path: Vec<String> = state.points.iter().map(|p| format!("{:.6},{:.6}", p[0], -p[1])).collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.6} {:.6} {:.6} {:.6}\">\n\
         <polygon points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"{:.6}\"/>\n</svg>\n",
        lo[0] - pad,
        -hi[1] - pad,
        w,
        h,
        path.join(" "),
        0.003 * w.max(h)
    )
}

/// Writes `frame_NNNN.json` (and `.svg`) into a directory.
pub struct DirSink {
    dir: PathBuf,
    svg: bool,
}

impl DirSink {
    pub fn new(dir: impl Into<PathBuf>, svg: bool) -> Result<Self, FlowError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DirSink { dir, svg })
    }
}

impl FrameSink for DirSink {
    fn frame(&mut self, index: usize, state: &CurveState) -> Result<(), FlowError> {
        let body = serde_json::to_string(&frame_json(index, state)).map_err(std::io::Error::other)?;
        fs::write(self.dir.join(format!("frame_{index:04}.json")), body)?;
        if self.svg {
            fs::write(self.dir.join(format!("frame_{index:04}.svg")), frame_svg(state))?;
        }
        Ok(())
    }
}
