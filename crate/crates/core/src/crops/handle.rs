use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::backend::Origin;
use crate::model::{BoundingBox, PixelBuffer};

/// Counts crop handles that are still alive.
#[derive(Debug, Default)]
pub struct CropLedger {
    created: AtomicU64,
    released: AtomicU64,
}

impl CropLedger {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn live(&self) -> u64 {
        // released is loaded first so a concurrent create cannot underflow
        let released = self.released.load(Ordering::SeqCst);
        self.created.load(Ordering::SeqCst) - released
    }

    pub fn created(&self) -> u64 {
        self.created.load(Ordering::SeqCst)
    }
}

/// Person crop cut from a frame. The only pixel-carrying value that moves
/// past the pose stage; it is deliberately neither `Clone` nor serializable.
pub struct CropHandle {
    pixels: Option<PixelBuffer>,
    origin: Origin,
    ledger: Arc<CropLedger>,
}

impl CropHandle {
    /// Cuts `bbox` out of `frame_pixels` when pixels exist; synthetic frames
    /// produce a handle with no pixel data at all.
    pub fn cut(frame_pixels: Option<&PixelBuffer>, bbox: &BoundingBox, origin: Origin, ledger: &Arc<CropLedger>) -> Self {
        ledger.created.fetch_add(1, Ordering::SeqCst);
        Self { pixels: frame_pixels.map(|p| crop_pixels(p, bbox)), origin, ledger: Arc::clone(ledger) }
    }

    pub fn pixels(&self) -> Option<&PixelBuffer> {
        self.pixels.as_ref()
    }

    pub fn origin(&self) -> &Origin {
        &self.origin
    }
}

impl Drop for CropHandle {
    fn drop(&mut self) {
        self.ledger.released.fetch_add(1, Ordering::SeqCst);
    }
}

impl fmt::Debug for CropHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CropHandle").field("pixels", &self.pixels.is_some()).finish()
    }
}

fn crop_pixels(src: &PixelBuffer, bbox: &BoundingBox) -> PixelBuffer {
    let b = bbox.clamp_to(src.width as f64, src.height as f64);
    let (x0, y0) = (b.x_min.floor() as usize, b.y_min.floor() as usize);
    let (x1, y1) = (b.x_max.ceil() as usize, b.y_max.ceil() as usize);
    let ch = src.channels as usize;
    let stride = src.width as usize * ch;
    let mut data = Vec::with_capacity((x1 - x0) * (y1 - y0) * ch);
    for y in y0..y1 {
        let row = &src.data[y * stride..(y + 1) * stride];
        data.extend_from_slice(&row[x0 * ch..x1 * ch]);
    }
    PixelBuffer { width: (x1 - x0) as u32, height: (y1 - y0) as u32, channels: src.channels, data: Arc::from(data) }
}
