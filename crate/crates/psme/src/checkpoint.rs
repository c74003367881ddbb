//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.csv   name,file,shape  (shape as `a x b x ...`)
//! <dir>/params/<name>.ten
//! <dir>/config.cfg     config snapshot
//! <dir>/loss.csv       epoch,loss
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use psme_core::model::Model;
use psme_core::ParameterStore;

use crate::config::{self, RunConfig};
use crate::{tenfile, IoError};

pub const MANIFEST: &str = "manifest.csv";
pub const CONFIG: &str = "config.cfg";
pub const LOSS: &str = "loss.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ParameterStore,
    pub loss_log: Vec<f64>,
}

pub fn save(dir: &Path, ck: &Checkpoint) -> Result<(), IoError> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir).map_err(|e| IoError::io(&pdir, e))?;
    let mut manifest = String::from("name,file,shape\n");
    for (name, t) in ck.params.iter() {
        let file = format!("params/{}.ten", name);
        tenfile::write(&dir.join(&file), t)?;
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(manifest, "{},{},{}", name, file, shape.join("x"));
    }
    let put = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| IoError::io(&p, e))
    };
    put(MANIFEST, &manifest)?;
    put(CONFIG, &config::to_text(&ck.config))?;
    let mut loss = String::from("epoch,loss\n");
    for (i, l) in ck.loss_log.iter().enumerate() {
        let _ = writeln!(loss, "{},{}", i + 1, l);
    }
    put(LOSS, &loss)
}

/// Loads a checkpoint and checks the parameters against the model its
/// config describes.
pub fn load(dir: &Path) -> Result<Checkpoint, IoError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| IoError::io(&p, e))
    };
    let config = config::parse(&read(CONFIG)?, &dir.join(CONFIG))?;
    let mpath = dir.join(MANIFEST);
    let mut params = ParameterStore::new();
    for (i, line) in read(MANIFEST)?.lines().enumerate().skip(1) {
        let bad = |msg: String| IoError::Csv {
            path: mpath.clone(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.split(',').collect();
        let [name, file, shape] = cols[..] else {
            return Err(bad(format!("expected 3 columns, got {}", cols.len())));
        };
        let t = tenfile::read(&dir.join(file))?;
        let want: Vec<usize> = shape.split('x').map(|d| d.parse().map_err(|_| bad(format!("bad shape `{}`", shape)))).collect::<Result<_, _>>()?;
        if t.shape() != want.as_slice() {
            return Err(IoError::Mismatch {
                path: dir.join(file),
                msg: format!("shape {:?}, manifest says {:?}", t.shape(), want),
            });
        }
        params.insert(name, t)?;
    }
    let model = Model::new(config.model.clone())?;
    for d in model.decls() {
        let found = params.get(&d.name).map(|t| t.shape().to_vec());
        if found.as_deref() != Some(d.shape.as_slice()) {
            return Err(IoError::Mismatch {
                path: mpath.clone(),
                msg: format!("parameter `{}` is {:?}, the model needs {:?}", d.name, found, d.shape),
            });
        }
    }
    let mut loss_log = Vec::new();
    for (i, line) in read(LOSS)?.lines().enumerate().skip(1) {
        let v = line.split(',').nth(1).and_then(|v| v.parse().ok()).ok_or_else(|| IoError::Csv {
            path: dir.join(LOSS),
            line: i + 1,
            msg: format!("bad row `{}`", line),
        })?;
        loss_log.push(v);
    }
    Ok(Checkpoint { config, params, loss_log })
}
