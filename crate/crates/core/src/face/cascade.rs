//! Boosted Haar-feature cascade evaluation (Viola-Jones) over integral
//! images. Cascades are read from OpenCV's XML format (`<cascade>` with
//! `BOOST`/`HAAR`), so any of the stock frontal-face files can be loaded.

use std::path::Path;

use roxmltree::{Document, Node};

use super::{FaceBox, FaceDetector};
use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
struct WeightedRect {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct HaarFeature {
    rects: Vec<WeightedRect>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TreeNode {
    left: i32,
    right: i32,
    feature: usize,
    threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct WeakTree {
    nodes: Vec<TreeNode>,
    leaves: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    threshold: f64,
    trees: Vec<WeakTree>,
}

/// Sliding-window parameters for multi-scale detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanParams {
    pub scale_factor: f64,
    pub min_neighbors: usize,
    /// Smallest window side in pixels; defaults to the cascade's base size.
    pub min_size: Option<usize>,
    /// Relative tolerance used when clustering raw hits.
    pub group_eps: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        ScanParams {
            scale_factor: 1.1,
            min_neighbors: 3,
            min_size: None,
            group_eps: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaarCascade {
    width: u32,
    height: u32,
    stages: Vec<Stage>,
    features: Vec<HaarFeature>,
    pub params: ScanParams,
}

const SYNTHETIC_FRONTAL: &str = include_str!("../../assets/synthetic_frontal_cascade.xml");

impl HaarCascade {
    pub fn from_file(path: &Path) -> Result<HaarCascade> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        HaarCascade::from_xml(&text).map_err(|e| match e {
            Error::ModelFormat(msg) => Error::Backend {
                backend: "viola-jones".into(),
                message: format!("{}: {msg}", path.display()),
            },
            other => other,
        })
    }

    /// Small hand-built cascade tuned to the faces drawn by
    /// [`crate::synthetic`]; it is not a general face detector.
    pub fn synthetic_frontal() -> HaarCascade {
        HaarCascade::from_xml(SYNTHETIC_FRONTAL).expect("bundled cascade parses")
    }

    pub fn window_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn from_xml(text: &str) -> Result<HaarCascade> {
        let bad = |m: &str| Error::ModelFormat(format!("cascade: {m}"));
        let doc = Document::parse(text).map_err(|e| Error::ModelFormat(format!("cascade XML: {e}")))?;
        let cascade = doc
            .descendants()
            .find(|n| n.has_tag_name("cascade"))
            .ok_or_else(|| bad("no <cascade> element (old-style cascades are not supported)"))?;

        if let Some(t) = child_text(cascade, "stageType") {
            if t != "BOOST" {
                return Err(bad(&format!("unsupported stage type {t}")));
            }
        }
        if let Some(t) = child_text(cascade, "featureType") {
            if t != "HAAR" {
                return Err(bad(&format!("unsupported feature type {t}")));
            }
        }
        let width: u32 = child_text(cascade, "width")
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("missing <width>"))?;
        let height: u32 = child_text(cascade, "height")
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("missing <height>"))?;

        let mut features = Vec::new();
        let feature_list = child(cascade, "features").ok_or_else(|| bad("missing <features>"))?;
        for f in items(feature_list) {
            if child_text(f, "tilted").is_some_and(|t| t != "0") {
                return Err(bad("tilted features are not supported"));
            }
            let rects_node = child(f, "rects").ok_or_else(|| bad("feature without <rects>"))?;
            let mut rects = Vec::new();
            for r in items(rects_node) {
                let v = numbers(r).ok_or_else(|| bad("malformed rect"))?;
                if v.len() != 5 || v[..4].iter().any(|x| *x < 0.0) {
                    return Err(bad("rect must be `x y w h weight`"));
                }
                rects.push(WeightedRect {
                    x: v[0] as u32,
                    y: v[1] as u32,
                    w: v[2] as u32,
                    h: v[3] as u32,
                    weight: v[4],
                });
            }
            features.push(HaarFeature { rects });
        }

        let mut stages = Vec::new();
        let stage_list = child(cascade, "stages").ok_or_else(|| bad("missing <stages>"))?;
        for s in items(stage_list) {
            let threshold: f64 = child_text(s, "stageThreshold")
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("stage without threshold"))?;
            let weak = child(s, "weakClassifiers").ok_or_else(|| bad("stage without classifiers"))?;
            let mut trees = Vec::new();
            for w in items(weak) {
                let internal = child(w, "internalNodes")
                    .and_then(numbers)
                    .ok_or_else(|| bad("missing internalNodes"))?;
                let leaves = child(w, "leafValues")
                    .and_then(numbers)
                    .ok_or_else(|| bad("missing leafValues"))?;
                if internal.is_empty() || internal.len() % 4 != 0 {
                    return Err(bad("internalNodes must hold groups of 4 numbers"));
                }
                let nodes: Vec<TreeNode> = internal
                    .chunks(4)
                    .map(|c| TreeNode {
                        left: c[0] as i32,
                        right: c[1] as i32,
                        feature: c[2] as usize,
                        threshold: c[3],
                    })
                    .collect();
                for n in &nodes {
                    if n.feature >= features.len() {
                        return Err(bad("weak classifier references unknown feature"));
                    }
                    for next in [n.left, n.right] {
                        let ok = if next <= 0 {
                            ((-next) as usize) < leaves.len()
                        } else {
                            (next as usize) < nodes.len()
                        };
                        if !ok {
                            return Err(bad("tree node points outside the tree"));
                        }
                    }
                }
                trees.push(WeakTree { nodes, leaves });
            }
            stages.push(Stage { threshold, trees });
        }
        if stages.is_empty() {
            return Err(bad("no stages"));
        }
        for f in &features {
            if f.rects.iter().any(|r| r.x + r.w > width || r.y + r.h > height) {
                return Err(bad("feature rectangle outside the detection window"));
            }
        }
        Ok(HaarCascade {
            width,
            height,
            stages,
            features,
            params: ScanParams::default(),
        })
    }

    /// Raw window hits before grouping.
    ///
    /// Window origins follow OpenCV's pyramid grid: at scale `s` the image is
    /// notionally shrunk by `s` and scanned with a step of 2 (1 once `s ≥ 2`),
    /// and grid points map back as `round(x · s)`.
    pub fn raw_hits(&self, image: &GrayImage) -> Vec<(usize, usize, usize, usize)> {
        let ii = Integral::new(image);
        let (iw, ih) = (image.width(), image.height());
        let (bw, bh) = (self.width as usize, self.height as usize);
        let min_side = self.params.min_size.unwrap_or(0);
        let mut hits = Vec::new();
        let mut scale: f64 = 1.0;
        loop {
            let ww = (bw as f64 * scale).round() as usize;
            let wh = (bh as f64 * scale).round() as usize;
            let (sw, sh) = ((iw as f64 / scale).round() as usize, (ih as f64 / scale).round() as usize);
            if ww > iw || wh > ih || sw < bw || sh < bh {
                break;
            }
            if ww >= min_side && wh >= min_side {
                let step = if scale >= 2.0 { 1 } else { 2 };
                for gy in (0..=sh - bh).step_by(step) {
                    for gx in (0..=sw - bw).step_by(step) {
                        let x = (gx as f64 * scale).round() as usize;
                        let y = (gy as f64 * scale).round() as usize;
                        if x + ww <= iw && y + wh <= ih && self.accepts(&ii, x, y, (ww, wh), scale) {
                            hits.push((x, y, ww, wh));
                        }
                    }
                }
            }
            scale *= self.params.scale_factor;
        }
        hits
    }

    fn accepts(&self, ii: &Integral, x: usize, y: usize, window: (usize, usize), scale: f64) -> bool {
        let sc = |v: u32| (v as f64 * scale).round() as usize;
        // Variance normalisation over the window shrunk by one base pixel.
        let nx = x + sc(1);
        let ny = y + sc(1);
        let nw = sc(self.width - 2).clamp(1, window.0 - sc(1).min(window.0 - 1));
        let nh = sc(self.height - 2).clamp(1, window.1 - sc(1).min(window.1 - 1));
        let area = (nw * nh) as f64;
        let sum = ii.sum(nx, ny, nw, nh);
        let sq = ii.sq_sum(nx, ny, nw, nh);
        let var = area * sq - sum * sum;
        let norm = if var > 0.0 { var.sqrt() } else { 1.0 };

        for stage in &self.stages {
            let mut total = 0.0;
            for tree in &stage.trees {
                let mut idx = 0usize;
                let leaf = loop {
                    let node = tree.nodes[idx];
                    let value = self.feature_value(ii, node.feature, x, y, window, scale);
                    let next = if value < node.threshold * norm {
                        node.left
                    } else {
                        node.right
                    };
                    if next <= 0 {
                        break (-next) as usize;
                    }
                    idx = next as usize;
                };
                total += tree.leaves[leaf];
            }
            if total < stage.threshold {
                return false;
            }
        }
        true
    }

    fn feature_value(
        &self,
        ii: &Integral,
        feature: usize,
        x: usize,
        y: usize,
        (ww, wh): (usize, usize),
        scale: f64,
    ) -> f64 {
        let mut value = 0.0;
        for r in &self.features[feature].rects {
            let ox = ((r.x as f64 * scale).round() as usize).min(ww - 1);
            let oy = ((r.y as f64 * scale).round() as usize).min(wh - 1);
            let rw = ((r.w as f64 * scale).round() as usize).clamp(1, ww - ox);
            let rh = ((r.h as f64 * scale).round() as usize).clamp(1, wh - oy);
            let (rx, ry) = (x + ox, y + oy);
            // Rounding changes the covered area; rescale to the nominal one.
            let nominal = r.w as f64 * r.h as f64 * scale * scale;
            value += r.weight * ii.sum(rx, ry, rw, rh) * nominal / (rw * rh) as f64;
        }
        value
    }
}

impl FaceDetector for HaarCascade {
    fn detect(&self, image: &GrayImage) -> Vec<FaceBox> {
        let hits = self.raw_hits(image);
        group_rectangles(&hits, self.params.min_neighbors, self.params.group_eps)
            .into_iter()
            .map(|(x, y, w, h, n)| FaceBox {
                x: x.min(image.width() - 1),
                y: y.min(image.height() - 1),
                w: w.min(image.width() - x.min(image.width() - 1)),
                h: h.min(image.height() - y.min(image.height() - 1)),
                score: n as f64,
            })
            .collect()
    }
}

struct Integral {
    stride: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn new(image: &GrayImage) -> Integral {
        let (w, h) = (image.width(), image.height());
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut sq = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for x in 0..w {
                let v = image.get(x, y) as f64;
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        Integral { stride, sum, sq }
    }

    #[inline]
    fn rect(table: &[f64], stride: usize, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let a = table[y * stride + x];
        let b = table[y * stride + x + w];
        let c = table[(y + h) * stride + x];
        let d = table[(y + h) * stride + x + w];
        d - b - c + a
    }

    fn sum(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        Self::rect(&self.sum, self.stride, x, y, w, h)
    }

    fn sq_sum(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        Self::rect(&self.sq, self.stride, x, y, w, h)
    }
}

fn similar(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize), eps: f64) -> bool {
    let delta = eps * (a.2.min(b.2) + a.3.min(b.3)) as f64 * 0.5;
    let close = |p: usize, q: usize| (p as f64 - q as f64).abs() <= delta;
    close(a.0, b.0) && close(a.1, b.1) && close(a.0 + a.2, b.0 + b.2) && close(a.1 + a.3, b.1 + b.3)
}

/// Clusters raw window hits, averages each cluster and keeps those with at
/// more than `min_neighbors` members. Clusters nested inside a stronger
/// cluster are dropped. With `min_neighbors == 0` the raw hits are returned
/// as they are. Returns `(x, y, w, h, members)`.
pub fn group_rectangles(
    hits: &[(usize, usize, usize, usize)],
    min_neighbors: usize,
    eps: f64,
) -> Vec<(usize, usize, usize, usize, usize)> {
    if min_neighbors == 0 {
        return hits.iter().map(|&(x, y, w, h)| (x, y, w, h, 1)).collect();
    }
    let n = hits.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if similar(hits[i], hits[j], eps) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut acc: std::collections::BTreeMap<usize, [usize; 5]> = Default::default();
    for (i, hit) in hits.iter().enumerate() {
        let root = find(&mut parent, i);
        let e = acc.entry(root).or_insert([0; 5]);
        e[0] += hit.0;
        e[1] += hit.1;
        e[2] += hit.2;
        e[3] += hit.3;
        e[4] += 1;
    }
    let clusters: Vec<(usize, usize, usize, usize, usize)> = acc
        .values()
        .filter(|e| e[4] > min_neighbors)
        .map(|e| {
            let c = e[4];
            let avg = |s: usize| (s as f64 / c as f64).round() as usize;
            (avg(e[0]), avg(e[1]), avg(e[2]), avg(e[3]), c)
        })
        .collect();

    clusters
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            !clusters.iter().enumerate().any(|(j, o)| {
                if *i == j {
                    return false;
                }
                let dx = (o.2 as f64 * eps).round() as isize;
                let dy = (o.3 as f64 * eps).round() as isize;
                let inside = r.0 as isize >= o.0 as isize - dx
                    && r.1 as isize >= o.1 as isize - dy
                    && (r.0 + r.2) as isize <= (o.0 + o.2) as isize + dx
                    && (r.1 + r.3) as isize <= (o.1 + o.3) as isize + dy;
                inside && (o.4 > r.4.max(3) || r.4 < 3)
            })
        })
        .map(|(_, r)| *r)
        .collect()
}

fn child<'a>(node: Node<'a, 'a>, name: &str) -> Option<Node<'a, 'a>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn child_text<'a>(node: Node<'a, 'a>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|c| c.text()).map(str::trim)
}

fn items<'a>(node: Node<'a, 'a>) -> impl Iterator<Item = Node<'a, 'a>> {
    node.children().filter(|c| c.has_tag_name("_"))
}

fn numbers(node: Node) -> Option<Vec<f64>> {
    node.text()?
        .split_whitespace()
        .map(|t| t.trim_end_matches('.').parse::<f64>().ok())
        .collect()
}
