use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError};
use serde::{Deserialize, Serialize};

use super::batching::{BatchAssembler, FrameDetections};
use super::host::{HostBudget, ResourcePools};
use super::outbox::{spawn_link, GlobalSink, LinkStats, NullSink, Outbound, Outbox};
use super::queue::{stage_queue, QueueReceiver, QueueSender, QueueSnapshot, QueueStats, SendOutcome};
use super::timeline::{simulate, NodeDemands, StageTiming};
use super::{ClockMode, PipelineConfig, PipelineError, Resource, Stage, Work};
use crate::backend::{Detector, FeatureExtractor, FeatureRequest, FrameSource, Origin, PoseEstimator, PoseRequest, RawDetection};
use crate::crops::{
    batch_for_extraction, select_per_window, CropCandidate, CropFrame, CropHandle, CropLedger, ExtractionAudit, SelectedCrop,
    SelectionDecision,
};
use crate::global::protocol::{MessageKind, ObjectSummary};
use crate::model::{BoundingBox, CameraId, FeatureRecord, FrameBatch, Nanos, PixelBuffer, TrackedPerson};
use crate::synth::{mix, GroundTruth, SyntheticSource};
use crate::tasks::{TaskError, TaskHost};
use crate::tracker::ByteTracker;

/// Everything one local node needs: a camera, its backends and its link.
pub struct NodeSetup {
    pub camera_id: CameraId,
    pub source: Box<dyn FrameSource>,
    pub detector: Box<dyn Detector>,
    pub pose: Box<dyn PoseEstimator>,
    pub features: Box<dyn FeatureExtractor>,
    pub tasks: TaskHost,
    pub sink: Box<dyn GlobalSink>,
}

impl NodeSetup {
    /// A node watching a generated world, with the configured built-in tasks
    /// and a sink that discards everything.
    pub fn synthetic(gt: &Arc<GroundTruth>, config: &PipelineConfig) -> Result<Self, TaskError> {
        let (detector, pose, features) = crate::synth::synthetic_backends(gt);
        Ok(Self {
            camera_id: gt.camera_id(),
            source: Box::new(SyntheticSource::new(gt)),
            detector: Box::new(detector),
            pose: Box::new(pose),
            features: Box::new(features),
            tasks: TaskHost::from_descriptors(gt.camera_id(), &config.tasks)?,
            sink: Box::new(NullSink::default()),
        })
    }

    pub fn with_sink(mut self, sink: impl GlobalSink + 'static) -> Self {
        self.sink = Box::new(sink);
        self
    }
}

/// Instrumentation counters of one node.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NodeCounters {
    pub frames_in: u64,
    /// Size of every frame batch the source emitted.
    pub frame_batch_sizes: Vec<usize>,
    pub person_detections: u64,
    pub object_detections: u64,
    pub tracked: u64,
    /// Size of every pose-backend invocation.
    pub pose_invocations: Vec<usize>,
    pub crops_created: u64,
    /// Crops chosen for extraction, per window.
    pub selected_per_window: Vec<usize>,
    /// Feature-backend batch sizes, per window.
    pub feature_batches: Vec<Vec<usize>>,
    pub features_sent: u64,
    /// Windows whose crop ledger was back at zero after extraction.
    pub windows_released: u64,
    pub windows_leaked: u64,
    pub audit_forwarded: u64,
    pub audit_duplicates: u64,
    pub audit_ineligible: u64,
    pub task_windows: u64,
    pub task_events: u64,
    pub task_failures: Vec<String>,
    pub outbox_pushed: u64,
    pub outbox_dropped: u64,
    pub dropped_batches: u64,
    #[serde(skip)]
    pub selection_decisions: Vec<SelectionDecision>,
}

/// Frame-sequence check at one sink.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceAudit {
    pub stage: Stage,
    pub frames: u64,
    pub expected_frames: u64,
    /// Frames skipped over between consecutive arrivals.
    pub gaps: u64,
    /// Frames at or before an already seen index.
    pub repeats: u64,
}

impl SequenceAudit {
    fn new(stage: Stage) -> Self {
        Self { stage, frames: 0, expected_frames: 0, gaps: 0, repeats: 0 }
    }

    fn observe(&mut self, last: &mut Option<u64>, frame: u64) {
        self.frames += 1;
        match *last {
            Some(l) if frame <= l => self.repeats += 1,
            Some(l) => {
                self.gaps += frame - l - 1;
                *last = Some(frame);
            }
            None => *last = Some(frame),
        }
    }

    /// Every frame arrived exactly once and in order.
    pub fn is_clean(&self) -> bool {
        self.gaps == 0 && self.repeats == 0 && self.frames == self.expected_frames
    }
}

/// One batch's passage through the node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTrace {
    pub batch: u64,
    pub first_frame: u64,
    pub frames: usize,
    /// Capture time of the first frame on the run's time axis; `None` for an
    /// unthrottled source.
    pub capture_first: Option<Nanos>,
    pub work: [Work; 7],
    pub demand: [Nanos; 7],
    /// `None` where the batch never reached the stage.
    pub timing: [Option<StageTiming>; 7],
}

impl BatchTrace {
    /// Completion at the last sink, if the batch reached every sink.
    pub fn sink_complete(&self) -> Option<Nanos> {
        Stage::ALL
            .iter()
            .filter(|s| s.is_sink())
            .map(|s| self.timing[s.index()].map(|t| t.complete))
            .try_fold(0, |m, c| c.map(|c| m.max(c)))
    }

    /// Start of the batch's journey: its first capture, or when the source
    /// began reading it.
    pub fn origin_time(&self) -> Option<Nanos> {
        self.timing[Stage::Source.index()].map(|t| t.enqueue)
    }
}

#[derive(Debug)]
pub struct NodeReport {
    pub node: usize,
    pub camera_id: CameraId,
    pub batches: Vec<BatchTrace>,
    pub counters: NodeCounters,
    pub audits: Vec<SequenceAudit>,
    /// Input queues in stage order (the source has none).
    pub queues: Vec<QueueSnapshot>,
    /// Peak input-queue occupancy per stage.
    pub max_occupancy: [usize; 7],
    pub failures: Vec<(Stage, String)>,
    pub link: Option<LinkStats>,
    /// The link was still busy when the grace period ran out.
    pub link_detached: bool,
}

impl NodeReport {
    pub fn frames_out(&self) -> u64 {
        self.batches.iter().filter(|b| b.sink_complete().is_some()).map(|b| b.frames as u64).sum()
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub clock: ClockMode,
    pub host: HostBudget,
    pub nodes: Vec<NodeReport>,
    pub wall_time: Duration,
}

#[derive(Clone, Copy)]
struct Clock {
    wall: bool,
    t0: Instant,
}

impl Clock {
    fn now(&self) -> Nanos {
        if self.wall {
            self.t0.elapsed().as_nanos() as Nanos
        } else {
            0
        }
    }

    fn sleep_until(&self, t: Nanos) {
        if self.wall {
            let now = self.now();
            if t > now {
                thread::sleep(Duration::from_nanos(t - now));
            }
        }
    }
}

struct NodeCtx {
    node: usize,
    camera_id: CameraId,
    config: Arc<PipelineConfig>,
    scale: f64,
    clock: Clock,
    pools: Arc<ResourcePools>,
    counters: Arc<Mutex<NodeCounters>>,
    outbox: Arc<Outbox>,
}

impl NodeCtx {
    fn demand(&self, stage: Stage, batch: u64, work: &Work) -> Nanos {
        let stream = mix(&[self.config.seed, self.node as u64, stage.index() as u64, batch]);
        self.config.services.get(stage).demand(work, self.scale, stream)
    }

    fn counters(&self) -> std::sync::MutexGuard<'_, NodeCounters> {
        self.counters.lock().expect("counters poisoned")
    }

    fn resource(&self, stage: Stage) -> Resource {
        self.config.services.get(stage).resource
    }

    /// Send time stamped on outbound messages: the batch's last capture under
    /// the deterministic clock, the OS clock otherwise.
    fn sent_at(&self, meta: &BatchMeta) -> Nanos {
        if self.clock.wall {
            crate::global::wall_clock_ns()
        } else {
            meta.frames.last().map_or(0, |f| f.1)
        }
    }
}

struct BatchMeta {
    batch_index: u64,
    /// `(frame_index, capture_time)` of every frame.
    frames: Vec<(u64, Nanos)>,
}

impl BatchMeta {
    fn capture_of(&self, frame_index: u64) -> Nanos {
        let first = self.frames.first().map_or(0, |f| f.0);
        self.frames.get(frame_index.saturating_sub(first) as usize).map_or(0, |f| f.1)
    }
}

struct Msg<T> {
    meta: Arc<BatchMeta>,
    data: T,
    /// Upstream completion, wall clock only.
    done_at: Nanos,
}

struct DetFrame {
    frame_index: u64,
    pixels: Option<PixelBuffer>,
    dets: Vec<RawDetection>,
}

struct TrackedFrame {
    frame_index: u64,
    pixels: Option<PixelBuffer>,
    persons: Vec<(TrackedPerson, Origin)>,
    untracked: Vec<BoundingBox>,
    objects: u32,
}

struct CropWindow {
    ledger: Arc<CropLedger>,
    frames: Vec<CropFrame>,
}

struct TaskBatch {
    frames: Vec<FrameDetections<TrackedPerson>>,
    persons: Vec<u32>,
    objects: Vec<u32>,
}

struct SelectedWindow {
    ledger: Arc<CropLedger>,
    selected: Vec<SelectedCrop>,
}

#[derive(Debug, Clone, Copy)]
struct StageRecord {
    batch: u64,
    work: Work,
    demand: Nanos,
    timing: Option<StageTiming>,
}

#[derive(Debug, Clone, Copy)]
struct SourceRecord {
    batch: u64,
    first_frame: u64,
    frames: usize,
    capture_first: Option<Nanos>,
    ready: Nanos,
}

#[derive(Default)]
struct StageResult {
    records: Vec<StageRecord>,
    sources: Vec<SourceRecord>,
    audit: Option<SequenceAudit>,
    failure: Option<String>,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_else(|| "panic".into())
}

/// Sends to every open queue; returns false once all of them are closed.
fn forward<T>(tx: &QueueSender<Msg<T>>, open: &mut bool, counters: &Mutex<NodeCounters>, msg: Msg<T>) {
    if !*open {
        return;
    }
    match tx.send(msg) {
        SendOutcome::Sent => {}
        SendOutcome::Dropped => counters.lock().expect("counters poisoned").dropped_batches += 1,
        SendOutcome::Disconnected => *open = false,
    }
}

/// Receive, serve, emit. `body` turns one input into one output and the work
/// it represents; `emit` hands the output on and reports whether any
/// downstream queue is still open.
fn run_stage<I, O>(
    ctx: &NodeCtx,
    stage: Stage,
    rx: QueueReceiver<Msg<I>>,
    result: &mut StageResult,
    mut body: impl FnMut(&Arc<BatchMeta>, I) -> Result<(O, Work), String>,
    mut emit: impl FnMut(Msg<O>) -> bool,
) {
    let mut last_frame = None;
    while let Some(msg) = rx.recv() {
        let dequeue = ctx.clock.now();
        let lease = ctx.clock.wall.then(|| ctx.pools.lease(ctx.resource(stage)));
        let start = ctx.clock.now();
        let meta = msg.meta;
        if let Some(audit) = result.audit.as_mut() {
            for &(f, _) in &meta.frames {
                audit.observe(&mut last_frame, f);
            }
        }
        let (out, work) = match body(&meta, msg.data) {
            Ok(x) => x,
            Err(e) => {
                result.failure = Some(e);
                return;
            }
        };
        let demand = ctx.demand(stage, meta.batch_index, &work);
        ctx.clock.sleep_until(start + demand);
        drop(lease);
        let complete = ctx.clock.now();
        let batch = meta.batch_index;
        let open = emit(Msg { meta, data: out, done_at: complete });
        let handoff = ctx.clock.now();
        let timing = ctx.clock.wall.then_some(StageTiming { enqueue: msg.done_at, dequeue, start, complete, handoff });
        result.records.push(StageRecord { batch, work, demand, timing });
        if !open {
            log::debug!("{}: {stage} has no open output, stopping", ctx.camera_id);
            return;
        }
    }
}

fn spawn_stage(
    ctx: &Arc<NodeCtx>,
    stage: Stage,
    f: impl FnOnce(&NodeCtx, &mut StageResult) + Send + 'static,
) -> Result<JoinHandle<StageResult>, PipelineError> {
    let ctx = Arc::clone(ctx);
    let handle = thread::Builder::new().name(format!("{}-{stage}", ctx.camera_id)).spawn(move || {
        let mut result = StageResult { audit: stage.is_sink().then(|| SequenceAudit::new(stage)), ..StageResult::default() };
        if let Err(p) = catch_unwind(AssertUnwindSafe(|| f(&ctx, &mut result))) {
            let msg = panic_message(p);
            log::error!("{}: stage {stage} panicked: {msg}", ctx.camera_id);
            result.failure = Some(format!("panic: {msg}"));
        }
        result
    })?;
    Ok(handle)
}

fn source_stage(ctx: &NodeCtx, mut source: Box<dyn FrameSource>, tx: QueueSender<Msg<FrameBatch>>, result: &mut StageResult) {
    let cfg = &ctx.config;
    let period = cfg.frame_period_ns();
    let mut asm = BatchAssembler::new(cfg.beta1);
    let mut stream_t0: Option<Nanos> = None;
    let mut open = true;
    while open {
        let read_start = ctx.clock.now();
        let mut next = None;
        while next.is_none() {
            match source.next_frame() {
                Some(frame) => match asm.push(frame) {
                    Ok(b) => next = b,
                    Err(e) => {
                        result.failure = Some(e.to_string());
                        return;
                    }
                },
                None => {
                    next = asm.finish();
                    break;
                }
            }
        }
        let Some(batch) = next else { break };
        let n = batch.frames.len();
        let first_capture = batch.frames[0].capture_time;
        let t0 = *stream_t0.get_or_insert(first_capture);
        let meta = Arc::new(BatchMeta {
            batch_index: batch.batch_index,
            frames: batch.frames.iter().map(|f| (f.frame_index, f.capture_time)).collect(),
        });
        // on the wall clock, capture times are shifted so the stream starts at run start
        let capture = if ctx.clock.wall { first_capture - t0 } else { first_capture };
        let (capture_first, ready) = match period {
            Some(p) => (Some(capture), capture + (n as f64 * p).round() as Nanos),
            None => (None, 0),
        };
        let work = Work { frames: n, invocations: 1, items: 0 };
        let demand = ctx.demand(Stage::Source, batch.batch_index, &work);
        let dequeue = capture_first.map_or(read_start, |c| c.max(read_start));
        ctx.clock.sleep_until(dequeue);
        let start = ctx.clock.now().max(dequeue);
        ctx.clock.sleep_until((start + demand).max(ready));
        let complete = ctx.clock.now();
        {
            let mut c = ctx.counters();
            c.frames_in += n as u64;
            c.frame_batch_sizes.push(n);
        }
        result.sources.push(SourceRecord {
            batch: batch.batch_index,
            first_frame: batch.frames[0].frame_index,
            frames: n,
            capture_first,
            ready,
        });
        let b = batch.batch_index;
        forward(&tx, &mut open, &ctx.counters, Msg { meta, data: batch, done_at: complete });
        let handoff = ctx.clock.now();
        let timing =
            ctx.clock.wall.then_some(StageTiming { enqueue: capture_first.unwrap_or(read_start), dequeue, start, complete, handoff });
        result.records.push(StageRecord { batch: b, work, demand, timing });
    }
}

fn detect_body(detector: &mut dyn Detector, batch: FrameBatch) -> Result<(Vec<DetFrame>, Work), String> {
    let dets = detector.detect(&batch);
    if dets.len() != batch.frames.len() {
        return Err(format!("detector returned {} frames for a batch of {}", dets.len(), batch.frames.len()));
    }
    let mut items = 0;
    let frames = batch
        .frames
        .into_iter()
        .zip(dets)
        .map(|(f, d)| {
            items += d.items.len();
            DetFrame { frame_index: f.frame_index, pixels: f.payload, dets: d.items }
        })
        .collect::<Vec<_>>();
    let work = Work { frames: frames.len(), invocations: 1, items };
    Ok((frames, work))
}

fn track_body(ctx: &NodeCtx, tracker: &mut ByteTracker, frames: Vec<DetFrame>) -> Result<(Vec<TrackedFrame>, Work), String> {
    let n = frames.len();
    let mut items = 0;
    let (mut persons_total, mut objects_total, mut tracked_total) = (0u64, 0u64, 0u64);
    let mut out = Vec::with_capacity(n);
    for f in frames {
        items += f.dets.len();
        let (people, others): (Vec<RawDetection>, Vec<RawDetection>) =
            f.dets.into_iter().partition(|d| d.detection.class_label.is_person());
        let boxes: Vec<_> = people.iter().map(|d| d.detection.clone()).collect();
        let assignments = tracker.update(f.frame_index, &boxes).map_err(|e| e.to_string())?;
        let mut assigned = vec![false; people.len()];
        let mut people: Vec<Option<RawDetection>> = people.into_iter().map(Some).collect();
        let mut persons = Vec::with_capacity(assignments.len());
        for a in assignments {
            assigned[a.detection] = true;
            let raw = people[a.detection].take().expect("assigned once");
            persons.push((
                TrackedPerson {
                    local_id: a.local_id,
                    detection: raw.detection,
                    pose: None,
                    frame_index: f.frame_index,
                    camera_id: ctx.camera_id.clone(),
                },
                raw.origin,
            ));
        }
        let untracked: Vec<BoundingBox> = people.into_iter().flatten().map(|d| d.detection.bbox).collect();
        persons_total += (persons.len() + untracked.len()) as u64;
        objects_total += others.len() as u64;
        tracked_total += persons.len() as u64;
        out.push(TrackedFrame { frame_index: f.frame_index, pixels: f.pixels, persons, untracked, objects: others.len() as u32 });
    }
    let mut c = ctx.counters();
    c.person_detections += persons_total;
    c.object_detections += objects_total;
    c.tracked += tracked_total;
    Ok((out, Work { frames: n, invocations: n, items }))
}

fn pose_body(
    ctx: &NodeCtx,
    estimator: &mut dyn PoseEstimator,
    frames: Vec<TrackedFrame>,
) -> Result<((CropWindow, TaskBatch), Work), String> {
    let ledger = CropLedger::new();
    let n = frames.len();
    let mut crops: Vec<(usize, usize, CropHandle)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        for (pi, (p, origin)) in f.persons.iter().enumerate() {
            crops.push((fi, pi, CropHandle::cut(f.pixels.as_ref(), &p.detection.bbox, origin.clone(), &ledger)));
        }
    }
    let mut poses = Vec::with_capacity(crops.len());
    let mut sizes = Vec::new();
    for chunk in crops.chunks(ctx.config.beta2) {
        let requests: Vec<PoseRequest<'_>> = chunk
            .iter()
            .map(|(fi, pi, crop)| PoseRequest {
                frame_index: frames[*fi].frame_index,
                bbox: frames[*fi].persons[*pi].0.detection.bbox,
                crop,
            })
            .collect();
        let got = estimator.estimate(&requests);
        if got.len() != requests.len() {
            return Err(format!("pose backend returned {} skeletons for {} crops", got.len(), requests.len()));
        }
        sizes.push(chunk.len());
        poses.extend(got);
    }
    let work = Work { frames: n, invocations: sizes.len(), items: crops.len() };
    {
        let mut c = ctx.counters();
        c.crops_created += crops.len() as u64;
        c.pose_invocations.extend(sizes);
    }

    let mut crop_frames: Vec<CropFrame> = frames
        .iter()
        .map(|f| CropFrame {
            frame_index: f.frame_index,
            candidates: Vec::with_capacity(f.persons.len()),
            untracked_boxes: f.untracked.clone(),
        })
        .collect();
    let mut task_frames: Vec<FrameDetections<TrackedPerson>> =
        frames.iter().map(|f| FrameDetections { frame_index: f.frame_index, items: Vec::with_capacity(f.persons.len()) }).collect();
    let persons: Vec<u32> = frames.iter().map(|f| (f.persons.len() + f.untracked.len()) as u32).collect();
    let objects: Vec<u32> = frames.iter().map(|f| f.objects).collect();
    let mut frames: Vec<Vec<Option<TrackedPerson>>> =
        frames.into_iter().map(|f| f.persons.into_iter().map(|(p, _)| Some(p)).collect()).collect();
    for ((fi, pi, crop), pose) in crops.into_iter().zip(poses) {
        let mut person = frames[fi][pi].take().expect("one crop per person");
        crop_frames[fi].candidates.push(CropCandidate::new(
            ctx.camera_id.clone(),
            person.local_id,
            person.frame_index,
            person.detection.bbox,
            pose.clone(),
            crop,
        ));
        person.pose = Some(pose);
        task_frames[fi].items.push(person);
    }
    Ok(((CropWindow { ledger, frames: crop_frames }, TaskBatch { frames: task_frames, persons, objects }), work))
}

fn crop_select_body(ctx: &NodeCtx, meta: &BatchMeta, window: CropWindow) -> (SelectedWindow, Work) {
    let candidates: usize = window.frames.iter().map(|f| f.candidates.len()).sum();
    let n = window.frames.len();
    let sel = select_per_window(&ctx.config.selection, meta.batch_index, window.frames);
    {
        let mut c = ctx.counters();
        c.selected_per_window.push(sel.selected.len());
        if ctx.config.record_selection {
            c.selection_decisions.extend(sel.decisions);
        }
    }
    (SelectedWindow { ledger: window.ledger, selected: sel.selected }, Work { frames: n, invocations: 1, items: candidates })
}

fn features_body(
    ctx: &NodeCtx,
    extractor: &mut dyn FeatureExtractor,
    audit: &mut ExtractionAudit,
    meta: &BatchMeta,
    window: SelectedWindow,
) -> Result<((), Work), String> {
    let SelectedWindow { ledger, selected } = window;
    let batches = batch_for_extraction(selected, ctx.config.beta3_cap);
    let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
    let mut items = 0;
    let mut sent = 0;
    let at = ctx.sent_at(meta);
    for batch in batches {
        let admitted: Vec<SelectedCrop> = batch.into_iter().filter(|c| audit.admit(&ctx.config.selection, meta.batch_index, c)).collect();
        if admitted.is_empty() {
            continue;
        }
        let requests: Vec<FeatureRequest<'_>> =
            admitted.iter().map(|c| FeatureRequest { frame_index: c.candidate.frame_index, crop: &c.candidate.crop }).collect();
        let vectors = extractor.extract(&requests);
        drop(requests);
        if vectors.len() != admitted.len() {
            return Err(format!("feature backend returned {} vectors for {} crops", vectors.len(), admitted.len()));
        }
        items += admitted.len();
        for (crop, vector) in admitted.into_iter().zip(vectors) {
            let c = crop.candidate;
            let quality = c.quality.clamp(0.0, 1.0);
            match FeatureRecord::from_raw(vector, c.camera_id.clone(), c.local_id, meta.capture_of(c.frame_index), quality) {
                Ok(record) => {
                    let payload = serde_json::to_value(&record).expect("feature serializes");
                    ctx.outbox.push(Outbound { kind: MessageKind::Feature, payload, at });
                    sent += 1;
                }
                Err(e) => log::warn!("{}: discarding feature for {}: {e}", ctx.camera_id, c.local_id),
            }
            // the crop handle is dropped here, right after its feature exists
        }
    }
    let released = ledger.live() == 0;
    let mut c = ctx.counters();
    c.feature_batches.push(sizes.clone());
    c.features_sent += sent;
    if released {
        c.windows_released += 1;
    } else {
        c.windows_leaked += 1;
        log::error!("{}: window {} still holds {} crops after extraction", ctx.camera_id, meta.batch_index, ledger.live());
    }
    c.audit_forwarded = audit.forwarded;
    c.audit_duplicates = audit.duplicates;
    c.audit_ineligible = audit.ineligible;
    Ok(((), Work { frames: meta.frames.len(), invocations: sizes.len(), items }))
}

/// Frames per object summary message.
const SUMMARY_FRAMES: usize = crate::global::privacy::BYTE_RUN / 2;

fn tasks_body(ctx: &NodeCtx, host: &mut TaskHost, meta: &BatchMeta, batch: TaskBatch) -> ((), Work) {
    let out = host.process(&batch.frames);
    let at = ctx.sent_at(meta);
    for e in &out.events {
        ctx.outbox.push(Outbound { kind: MessageKind::TaskEvent, payload: serde_json::to_value(e).expect("event serializes"), at });
    }
    let period = match (meta.frames.first(), meta.frames.last()) {
        (Some(a), Some(b)) if meta.frames.len() > 1 => (b.1 - a.1) / (meta.frames.len() as u64 - 1),
        _ => ctx.config.frame_period_ns().unwrap_or(0.0).round() as u64,
    };
    // Long summaries would read as byte arrays to the global node's privacy screen.
    for (i, (persons, objects)) in batch.persons.chunks(SUMMARY_FRAMES).zip(batch.objects.chunks(SUMMARY_FRAMES)).enumerate() {
        let first = meta.frames.get(i * SUMMARY_FRAMES);
        let summary = ObjectSummary {
            frame_start: first.map_or(0, |f| f.0),
            start_time: first.map_or(0, |f| f.1),
            frame_period_ns: period,
            persons: persons.to_vec(),
            objects: objects.to_vec(),
        };
        ctx.outbox.push(Outbound {
            kind: MessageKind::ObjectSummary,
            payload: serde_json::to_value(&summary).expect("summary serializes"),
            at,
        });
    }
    let mut c = ctx.counters();
    c.task_windows += out.windows as u64;
    c.task_events += out.events.len() as u64;
    c.task_failures.extend(out.failures);
    ((), Work { frames: meta.frames.len(), invocations: out.windows, items: out.events.len() })
}

struct NodeRuntime {
    ctx: Arc<NodeCtx>,
    stages: Vec<(Stage, JoinHandle<StageResult>)>,
    queues: Vec<(Stage, Arc<QueueStats>)>,
    link: Receiver<LinkStats>,
}

/// A run in progress.
pub struct RunHandle {
    config: Arc<PipelineConfig>,
    host: HostBudget,
    nodes: Vec<NodeRuntime>,
    started: Instant,
}

fn start_node(
    node: usize,
    setup: NodeSetup,
    config: &Arc<PipelineConfig>,
    host: &HostBudget,
    nodes: usize,
    clock: Clock,
    pools: &Arc<ResourcePools>,
) -> Result<NodeRuntime, PipelineError> {
    let NodeSetup { camera_id, source, mut detector, mut pose, mut features, mut tasks, sink } = setup;
    let outbox = Outbox::new(config.outbox_capacity);
    let link = spawn_link(camera_id.clone(), Arc::clone(&outbox), sink);
    let ctx = Arc::new(NodeCtx {
        node,
        camera_id: camera_id.clone(),
        config: Arc::clone(config),
        scale: host.scale(nodes),
        clock,
        pools: Arc::clone(pools),
        counters: Arc::new(Mutex::new(NodeCounters::default())),
        outbox,
    });
    let cap = config.lambda1;
    let policy = config.overflow;
    let q = |s: Stage| format!("{camera_id}/{s}");
    let (det_tx, det_rx, det_q) = stage_queue::<Msg<FrameBatch>>(&q(Stage::Detect), cap, policy);
    let (trk_tx, trk_rx, trk_q) = stage_queue::<Msg<Vec<DetFrame>>>(&q(Stage::Track), cap, policy);
    let (pose_tx, pose_rx, pose_q) = stage_queue::<Msg<Vec<TrackedFrame>>>(&q(Stage::Pose), cap, policy);
    let (crop_tx, crop_rx, crop_q) = stage_queue::<Msg<CropWindow>>(&q(Stage::CropSelect), cap, policy);
    let (task_tx, task_rx, task_q) = stage_queue::<Msg<TaskBatch>>(&q(Stage::Tasks), cap, policy);
    let (feat_tx, feat_rx, feat_q) = stage_queue::<Msg<SelectedWindow>>(&q(Stage::Features), cap, policy);

    let mut stages = Vec::with_capacity(7);
    stages.push((Stage::Source, spawn_stage(&ctx, Stage::Source, move |ctx, r| source_stage(ctx, source, det_tx, r))?));
    stages.push((
        Stage::Detect,
        spawn_stage(&ctx, Stage::Detect, move |ctx, r| {
            let mut open = true;
            run_stage(
                ctx,
                Stage::Detect,
                det_rx,
                r,
                |_, batch| detect_body(detector.as_mut(), batch),
                |m| {
                    forward(&trk_tx, &mut open, &ctx.counters, m);
                    open
                },
            )
        })?,
    ));
    let tracker_config = config.tracker.clone();
    stages.push((
        Stage::Track,
        spawn_stage(&ctx, Stage::Track, move |ctx, r| {
            let mut tracker = ByteTracker::new(tracker_config);
            let mut open = true;
            run_stage(
                ctx,
                Stage::Track,
                trk_rx,
                r,
                |_, frames| track_body(ctx, &mut tracker, frames),
                |m| {
                    forward(&pose_tx, &mut open, &ctx.counters, m);
                    open
                },
            )
        })?,
    ));
    stages.push((
        Stage::Pose,
        spawn_stage(&ctx, Stage::Pose, move |ctx, r| {
            let (mut crops_open, mut tasks_open) = (true, true);
            run_stage(
                ctx,
                Stage::Pose,
                pose_rx,
                r,
                |_, frames| pose_body(ctx, pose.as_mut(), frames),
                |m: Msg<(CropWindow, TaskBatch)>| {
                    let (window, batch) = m.data;
                    forward(&crop_tx, &mut crops_open, &ctx.counters, Msg { meta: Arc::clone(&m.meta), data: window, done_at: m.done_at });
                    forward(&task_tx, &mut tasks_open, &ctx.counters, Msg { meta: m.meta, data: batch, done_at: m.done_at });
                    crops_open || tasks_open
                },
            )
        })?,
    ));
    stages.push((
        Stage::CropSelect,
        spawn_stage(&ctx, Stage::CropSelect, move |ctx, r| {
            let mut open = true;
            run_stage(
                ctx,
                Stage::CropSelect,
                crop_rx,
                r,
                |meta, w| Ok(crop_select_body(ctx, meta, w)),
                |m| {
                    forward(&feat_tx, &mut open, &ctx.counters, m);
                    open
                },
            )
        })?,
    ));
    stages.push((
        Stage::Features,
        spawn_stage(&ctx, Stage::Features, move |ctx, r| {
            let mut audit = ExtractionAudit::default();
            run_stage(ctx, Stage::Features, feat_rx, r, |meta, w| features_body(ctx, features.as_mut(), &mut audit, meta, w), |_| true)
        })?,
    ));
    stages.push((
        Stage::Tasks,
        spawn_stage(&ctx, Stage::Tasks, move |ctx, r| {
            run_stage(ctx, Stage::Tasks, task_rx, r, |meta, b| Ok(tasks_body(ctx, &mut tasks, meta, b)), |_| true)
        })?,
    ));
    let queues = vec![
        (Stage::Detect, det_q),
        (Stage::Track, trk_q),
        (Stage::Pose, pose_q),
        (Stage::CropSelect, crop_q),
        (Stage::Features, feat_q),
        (Stage::Tasks, task_q),
    ];
    Ok(NodeRuntime { ctx, stages, queues, link })
}

/// Starts one local node per setup, all sharing `host`.
pub fn run_nodes(config: &PipelineConfig, host: &HostBudget, setups: Vec<NodeSetup>) -> Result<RunHandle, PipelineError> {
    config.validate()?;
    host.check(setups.len())?;
    let config = Arc::new(config.clone());
    let clock = Clock { wall: config.clock == ClockMode::Wall, t0: Instant::now() };
    let pools = Arc::new(ResourcePools::new(host));
    let count = setups.len();
    let nodes = setups
        .into_iter()
        .enumerate()
        .map(|(i, s)| start_node(i, s, &config, host, count, clock, &pools))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunHandle { config, host: host.clone(), nodes, started: clock.t0 })
}

/// Starts a single local node with the host to itself.
pub fn run_local_node(config: &PipelineConfig, setup: NodeSetup) -> Result<RunHandle, PipelineError> {
    run_nodes(config, &HostBudget::unlimited(), vec![setup])
}

struct Collected {
    node: usize,
    camera_id: CameraId,
    results: [StageResult; 7],
    counters: NodeCounters,
    queues: Vec<QueueSnapshot>,
    link: Option<LinkStats>,
    link_detached: bool,
}

impl RunHandle {
    /// Waits for every node to finish and assembles the report. Under the
    /// deterministic clock this also replays the declared demands.
    pub fn join(self) -> Result<RunReport, PipelineError> {
        let grace = Duration::from_millis(self.config.outbox_grace_ms);
        let mut collected = Vec::with_capacity(self.nodes.len());
        for rt in self.nodes {
            let mut results: [StageResult; 7] = Default::default();
            for (stage, h) in rt.stages {
                results[stage.index()] =
                    h.join().unwrap_or_else(|p| StageResult { failure: Some(panic_message(p)), ..StageResult::default() });
            }
            rt.ctx.outbox.close();
            let (link, link_detached) = match rt.link.recv_timeout(grace) {
                Ok(s) => (Some(s), false),
                Err(RecvTimeoutError::Timeout) => {
                    log::warn!("{}: global link still busy after {grace:?}; detaching", rt.ctx.camera_id);
                    (None, true)
                }
                Err(RecvTimeoutError::Disconnected) => (None, false),
            };
            let mut counters = rt.ctx.counters().clone();
            counters.outbox_pushed = rt.ctx.outbox.pushed();
            counters.outbox_dropped = rt.ctx.outbox.dropped();
            let queues = rt.queues.iter().map(|(_, q)| q.snapshot()).collect();
            collected.push(Collected {
                node: rt.ctx.node,
                camera_id: rt.ctx.camera_id.clone(),
                results,
                counters,
                queues,
                link,
                link_detached,
            });
        }

        let wall = self.config.clock == ClockMode::Wall;
        let timeline = if wall {
            None
        } else {
            let demands: Vec<NodeDemands> = collected.iter().map(|c| demands_of(&c.results, &self.config.services)).collect();
            Some(simulate(&demands, self.config.lambda1, &self.host)?)
        };

        let nodes = collected.into_iter().enumerate().map(|(i, c)| build_report(i, c, timeline.as_ref())).collect();
        Ok(RunReport { clock: self.config.clock, host: self.host, nodes, wall_time: self.started.elapsed() })
    }
}

/// Batches every stage saw, as a common prefix of batch indices.
fn complete_prefix(results: &[StageResult; 7]) -> usize {
    let mut n = results[Stage::Source.index()].sources.len();
    for r in results {
        let ok = r.records.iter().enumerate().take_while(|(i, rec)| rec.batch == *i as u64).count();
        n = n.min(ok);
    }
    n
}

fn demands_of(results: &[StageResult; 7], services: &super::ServiceProfile) -> NodeDemands {
    let n = complete_prefix(results);
    let src = &results[Stage::Source.index()].sources[..n];
    NodeDemands {
        capture_first: src.iter().map(|s| s.capture_first).collect(),
        ready: src.iter().map(|s| s.ready).collect(),
        demand: std::array::from_fn(|s| results[s].records[..n].iter().map(|r| r.demand).collect()),
        resource: std::array::from_fn(|s| services.get(Stage::ALL[s]).resource),
    }
}

fn build_report(i: usize, c: Collected, timeline: Option<&super::Timeline>) -> NodeReport {
    let Collected { node, camera_id, results, mut counters, queues, link, link_detached } = c;
    let sources = &results[Stage::Source.index()].sources;
    let prefix = complete_prefix(&results);
    let mut batches: Vec<BatchTrace> = sources
        .iter()
        .map(|s| BatchTrace {
            batch: s.batch,
            first_frame: s.first_frame,
            frames: s.frames,
            capture_first: s.capture_first,
            work: [Work::default(); 7],
            demand: [0; 7],
            timing: [None; 7],
        })
        .collect();
    for stage in Stage::ALL {
        for r in &results[stage.index()].records {
            let Some(b) = batches.get_mut(r.batch as usize) else { continue };
            b.work[stage.index()] = r.work;
            b.demand[stage.index()] = r.demand;
            b.timing[stage.index()] = match timeline {
                None => r.timing,
                Some(t) if (r.batch as usize) < prefix => Some(*t.timing(i, stage, r.batch as usize)),
                Some(_) => None,
            };
        }
    }
    let max_occupancy = match timeline {
        Some(t) => t.max_occupancy[i],
        None => {
            let mut m = [0; 7];
            for (s, q) in Stage::ALL.iter().skip(1).zip(&queues) {
                m[s.index()] = q.max_len;
            }
            m
        }
    };
    let expected = counters.frames_in;
    let audits = results
        .iter()
        .filter_map(|r| r.audit.clone())
        .map(|mut a| {
            a.expected_frames = expected;
            a
        })
        .collect();
    let failures: Vec<(Stage, String)> = Stage::ALL.iter().filter_map(|s| results[s.index()].failure.clone().map(|f| (*s, f))).collect();
    if !counters.task_failures.is_empty() {
        log::warn!("{camera_id}: {} task failures", counters.task_failures.len());
    }
    counters.selection_decisions.sort_by_key(|d| (d.window, d.frame_index, d.local_id));
    NodeReport { node, camera_id, batches, counters, audits, queues, max_occupancy, failures, link, link_detached }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{NullDetector, NullFeatures, NullPose};
    use crate::model::Frame;
    use crate::pipeline::ServiceModel;

    fn null_setup(frames: u64, fps: f64) -> NodeSetup {
        let cam = CameraId::new("null");
        let c = cam.clone();
        let source = (0..frames).map(move |f| Frame::synthetic(c.clone(), f, (f as f64 * 1e9 / fps).round() as u64));
        NodeSetup {
            camera_id: cam.clone(),
            source: Box::new(source),
            detector: Box::new(NullDetector),
            pose: Box::new(NullPose),
            features: Box::new(NullFeatures { dim: 4 }),
            tasks: TaskHost::new(cam),
            sink: Box::new(NullSink::default()),
        }
    }

    #[test]
    fn null_pipeline_delivers_every_frame_once() {
        let report = run_local_node(&PipelineConfig::default(), null_setup(300, 30.0)).unwrap().join().unwrap();
        let node = &report.nodes[0];
        assert!(node.failures.is_empty());
        assert_eq!(node.frames_out(), 300);
        assert_eq!(node.audits.len(), 2);
        assert!(node.audits.iter().all(SequenceAudit::is_clean), "{:?}", node.audits);
        assert_eq!(node.counters.frame_batch_sizes, vec![30; 10]);
    }

    #[test]
    fn partial_last_batch_is_flushed() {
        let report = run_local_node(&PipelineConfig::default(), null_setup(65, 30.0)).unwrap().join().unwrap();
        assert_eq!(report.nodes[0].counters.frame_batch_sizes, vec![30, 30, 5]);
    }

    struct Exploding;

    impl PoseEstimator for Exploding {
        fn estimate(&mut self, _: &[PoseRequest<'_>]) -> Vec<crate::model::PoseSkeleton> {
            panic!("pose backend crashed")
        }
    }

    #[test]
    fn stage_panic_shuts_down_with_partial_report() {
        let gt =
            Arc::new(crate::synth::generate_world(&crate::synth::ScenarioSpec { duration_frames: 300, ..Default::default() }).unwrap());
        let mut setup = NodeSetup::synthetic(&gt, &PipelineConfig::default()).unwrap();
        setup.pose = Box::new(Exploding);
        let report = run_local_node(&PipelineConfig::default(), setup).unwrap().join().unwrap();
        let node = &report.nodes[0];
        assert_eq!(node.failures.len(), 1);
        assert_eq!(node.failures[0].0, Stage::Pose);
        assert!(node.failures[0].1.contains("crashed"));
    }

    #[test]
    fn wall_clock_slow_sink_blocks_upstream() {
        let mut cfg =
            PipelineConfig { clock: ClockMode::Wall, source: crate::pipeline::SourceMode::Unthrottled, ..PipelineConfig::default() };
        cfg.services.tasks = ServiceModel::per_batch(20.0);
        let report = run_local_node(&cfg, null_setup(600, 30.0)).unwrap().join().unwrap();
        let node = &report.nodes[0];
        assert!(node.queues.iter().all(|q| q.max_len <= 4), "{:?}", node.queues);
        assert!(node.queues.iter().any(|q| q.blocked_sends > 0));
        assert!(node.audits.iter().all(SequenceAudit::is_clean));
    }
}
