//! Conditioning queues for the denoiser and scene edits expressed on them.
//!
//! A stack holds `N + 1` color and depth latents. Color slot 0 carries the
//! dense reference frame (or zeros when it was dropped during training);
//! color slots `1..=N` and every depth slot carry sparse LiDAR projections.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FusedScene;
use crate::modality::{
    encode_depth3, DepthMap, LatentCodec, LatentTensor, PseudoImage, SpaceToDepth, DEFAULT_D_MAX,
};

/// Reference-slot dropout probability used while training.
pub const DEFAULT_REF_DROPOUT: f64 = 0.2;

/// Which modality the denoiser is asked to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Color,
    Depth,
    Semantic,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::Color, TaskId::Depth, TaskId::Semantic];

    pub fn index(self) -> usize {
        match self {
            TaskId::Color => 0,
            TaskId::Depth => 1,
            TaskId::Semantic => 2,
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Color => "color",
            TaskId::Depth => "depth",
            TaskId::Semantic => "semantic",
        }
    }
}

impl std::str::FromStr for TaskId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "color" => Ok(TaskId::Color),
            "depth" => Ok(TaskId::Depth),
            "semantic" => Ok(TaskId::Semantic),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStack {
    color_latents: Vec<LatentTensor>,
    depth_latents: Vec<LatentTensor>,
    ref_latent: LatentTensor,
    task: TaskId,
    ref_dropped: bool,
}

impl ConditionStack {
    /// Assembles a stack from already-encoded latents: the reference goes to
    /// color slot 0, followed by the `N` sparse color latents; `depth` holds
    /// all `N + 1` sparse depth latents.
    pub fn from_latents(
        reference: LatentTensor,
        sparse_colors: Vec<LatentTensor>,
        depth: Vec<LatentTensor>,
        task: TaskId,
    ) -> Result<Self> {
        if depth.len() != sparse_colors.len() + 1 {
            return Err(Error::shape(
                format!("{} depth conditions", sparse_colors.len() + 1),
                format!("{}", depth.len()),
            ));
        }
        for z in sparse_colors.iter().chain(&depth) {
            reference.check_same_shape(z)?;
        }
        let mut color_latents = Vec::with_capacity(depth.len());
        color_latents.push(reference.clone());
        color_latents.extend(sparse_colors);
        Ok(Self {
            color_latents,
            depth_latents: depth,
            ref_latent: reference,
            task,
            ref_dropped: false,
        })
    }

    /// Training-time assembly: the sparse frame-0 color latent is replaced by
    /// the dense reference, which is zeroed with probability `drop_p`.
    pub fn assemble_train<R: Rng + ?Sized>(
        reference: LatentTensor,
        sparse_colors: Vec<LatentTensor>,
        depth: Vec<LatentTensor>,
        task: TaskId,
        drop_p: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&drop_p) {
            return Err(Error::invalid("dropout probability must lie in [0, 1]"));
        }
        if sparse_colors.len() != depth.len() {
            return Err(Error::shape(
                format!("{} sparse colors", depth.len()),
                format!("{}", sparse_colors.len()),
            ));
        }
        if sparse_colors.is_empty() {
            return Err(Error::invalid("condition stack needs at least one frame"));
        }
        let mut stack = Self::from_latents(reference, sparse_colors[1..].to_vec(), depth, task)?;
        if rng.gen::<f64>() < drop_p {
            let (h, w, c) = stack.ref_latent.shape();
            stack.ref_latent = LatentTensor::zeros(h, w, c);
            stack.color_latents[0] = stack.ref_latent.clone();
            stack.ref_dropped = true;
        }
        Ok(stack)
    }

    pub fn color_latents(&self) -> &[LatentTensor] {
        &self.color_latents
    }

    pub fn depth_latents(&self) -> &[LatentTensor] {
        &self.depth_latents
    }

    pub fn ref_latent(&self) -> &LatentTensor {
        &self.ref_latent
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn ref_dropped(&self) -> bool {
        self.ref_dropped
    }

    /// `N + 1`.
    pub fn num_frames(&self) -> usize {
        self.depth_latents.len()
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.ref_latent.shape()
    }

    /// Shape of the clip latent the denoiser works on: all frames stacked
    /// along the height axis.
    pub fn clip_shape(&self) -> (usize, usize, usize) {
        let (h, w, c) = self.frame_shape();
        (h * self.num_frames(), w, c)
    }

    pub fn with_task(&self, task: TaskId) -> Self {
        Self {
            task,
            ..self.clone()
        }
    }
}

/// Encodes rasters into condition stacks with a given latent codec.
pub struct StackEncoder {
    pub codec: Box<dyn LatentCodec>,
    /// Depth normalization range in meters.
    pub d_max: f64,
}

impl Default for StackEncoder {
    fn default() -> Self {
        Self {
            codec: Box::new(SpaceToDepth::default()),
            d_max: DEFAULT_D_MAX,
        }
    }
}

impl StackEncoder {
    fn encode_depths(&self, depths: &[DepthMap]) -> Result<Vec<LatentTensor>> {
        depths
            .iter()
            .map(|d| self.codec.encode(&encode_depth3(d, self.d_max)?))
            .collect()
    }

    fn encode_images(&self, images: &[PseudoImage]) -> Result<Vec<LatentTensor>> {
        images.iter().map(|i| self.codec.encode(i)).collect()
    }

    /// `sparse_colors` and `sparse_depths` cover frames `0..=N`; the frame-0
    /// sparse color is superseded by `reference`.
    pub fn build_train_stack<R: Rng + ?Sized>(
        &self,
        reference: &PseudoImage,
        sparse_colors: &[PseudoImage],
        sparse_depths: &[DepthMap],
        task: TaskId,
        drop_p: f64,
        rng: &mut R,
    ) -> Result<ConditionStack> {
        if sparse_colors.len() != sparse_depths.len() || sparse_colors.is_empty() {
            return Err(Error::shape(
                format!("{} sparse depths", sparse_colors.len()),
                format!("{}", sparse_depths.len()),
            ));
        }
        check_sizes(reference, sparse_colors, sparse_depths)?;
        ConditionStack::assemble_train(
            self.codec.encode(reference)?,
            self.encode_images(sparse_colors)?,
            self.encode_depths(sparse_depths)?,
            task,
            drop_p,
            rng,
        )
    }

    /// `sparse_colors` covers novel frames `1..=N`, `sparse_depths` frames
    /// `0..=N`. No dropout.
    pub fn build_infer_stack(
        &self,
        reference: &PseudoImage,
        sparse_colors: &[PseudoImage],
        sparse_depths: &[DepthMap],
        task: TaskId,
    ) -> Result<ConditionStack> {
        if sparse_depths.len() != sparse_colors.len() + 1 {
            return Err(Error::shape(
                format!("{} sparse depths", sparse_colors.len() + 1),
                format!("{}", sparse_depths.len()),
            ));
        }
        check_sizes(reference, sparse_colors, sparse_depths)?;
        ConditionStack::from_latents(
            self.codec.encode(reference)?,
            self.encode_images(sparse_colors)?,
            self.encode_depths(sparse_depths)?,
            task,
        )
    }

    /// Swaps the reference frame; sparse slots are left untouched.
    pub fn edit_reference(&self, stack: &ConditionStack, new_reference: &PseudoImage) -> Result<ConditionStack> {
        let z = self.codec.encode(new_reference)?;
        stack.ref_latent.check_same_shape(&z)?;
        let mut out = stack.clone();
        out.color_latents[0] = z.clone();
        out.ref_latent = z;
        out.ref_dropped = false;
        Ok(out)
    }
}

fn check_sizes(reference: &PseudoImage, colors: &[PseudoImage], depths: &[DepthMap]) -> Result<()> {
    for c in colors {
        reference.same_size(c)?;
    }
    for d in depths {
        if d.width != reference.width || d.height != reference.height {
            return Err(Error::shape(
                format!("{}x{}", reference.width, reference.height),
                format!("{}x{}", d.width, d.height),
            ));
        }
    }
    Ok(())
}

/// Drops an object and its track from the scene for good.
pub fn edit_remove_object(scene: &FusedScene, object_id: i32) -> Result<FusedScene> {
    if !scene.objects.contains_key(&object_id) {
        return Err(Error::UnknownObject(object_id));
    }
    let mut out = scene.clone();
    out.objects.remove(&object_id);
    out.tracks.retain(|t| t.object_id() != object_id);
    Ok(out)
}

/// Removes several objects, in order.
pub fn edit_remove_objects(scene: &FusedScene, ids: &BTreeSet<i32>) -> Result<FusedScene> {
    ids.iter().try_fold(scene.clone(), |s, id| edit_remove_object(&s, *id))
}
