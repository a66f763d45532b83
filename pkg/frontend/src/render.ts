/** Pure HTML renderers.
 *
 * Everything here is a string-in/string-out function of PredictResponse
 * fields and view state, which keeps the views snapshot-testable and makes
 * "the UI never recomputes probabilities" checkable: the only numbers below
 * come straight from the response (percent formatting aside).
 */

import type { FramePrediction, VideoPrediction } from "./types.js";
import type { ScreeningSession } from "./session.js";

export const CLASS_LABELS: Record<string, string> = {
  covid: "COVID-19",
  pneumonia: "Bacterial pneumonia",
  healthy: "Healthy",
  uninformative: "Uninformative",
};

export const DEFAULT_CONFIDENCE_WARNING = 0.5;

const CLASS_ORDER = ["covid", "pneumonia", "healthy", "uninformative"];

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function pct(p: number): string {
  return `${(p * 100).toFixed(1)}%`;
}

/** Horizontal probability bars, one per class, widths straight from probs. */
export function renderProbabilityBars(probs: number[], winner: string): string {
  const rows = CLASS_ORDER.map((cls, i) => {
    const p = probs[i] ?? 0;
    const highlight = cls === winner ? " bar-row-winner" : "";
    return (
      `<div class="bar-row${highlight}" data-class="${cls}">` +
      `<span class="bar-label">${CLASS_LABELS[cls]}</span>` +
      `<span class="bar-track"><span class="bar-fill bar-${cls}" style="width:${pct(p)}"></span></span>` +
      `<span class="bar-value">${pct(p)}</span>` +
      `</div>`
    );
  });
  return `<div class="probability-bars">${rows.join("")}</div>`;
}

/** Confidence badge; a value under the threshold gets the warning styling. */
export function renderConfidenceBadge(
  kind: "epistemic" | "aleatoric",
  value: number | undefined,
  threshold: number = DEFAULT_CONFIDENCE_WARNING,
): string {
  if (value === undefined) return "";
  const low = value < threshold;
  const cls = low ? "badge badge-warning" : "badge badge-ok";
  const label = kind === "epistemic" ? "model confidence" : "data confidence";
  const warning = low ? ` <span class="badge-alert">low confidence</span>` : "";
  return `<span class="${cls}" data-kind="${kind}">${label} ${value.toFixed(2)}${warning}</span>`;
}

/** One frame panel: overlay/original images, badges, per-frame bars. */
export function renderFramePanel(
  frame: FramePrediction,
  options: {
    overlayOn: boolean;
    originalSrc: string | null;
    threshold: number;
  },
): string {
  const { overlayOn, originalSrc, threshold } = options;
  // Overlay toggling is pure presentation: both images stay in the DOM and
  // visibility flips, the underlying pixels are never edited.
  const overlayImg = frame.heatmap_ref
    ? `<img class="frame-img frame-overlay" src="${frame.heatmap_ref}" alt="activation overlay"` +
      `${overlayOn ? "" : ' style="display:none"'}>`
    : "";
  const showOriginal = !overlayOn || !frame.heatmap_ref;
  const originalImg = originalSrc
    ? `<img class="frame-img frame-original" src="${escapeHtml(originalSrc)}" alt="original frame"` +
      `${showOriginal ? "" : ' style="display:none"'}>`
    : overlayImg
      ? ""
      : `<div class="frame-placeholder">no image for this frame</div>`;
  const badges = [
    renderConfidenceBadge("epistemic", frame.epistemic_c, threshold),
    renderConfidenceBadge("aleatoric", frame.aleatoric_c, threshold),
  ]
    .filter(Boolean)
    .join(" ");
  return (
    `<div class="frame-panel" data-frame="${frame.frame_index}">` +
    `<div class="frame-media">${originalImg}${overlayImg}</div>` +
    `<div class="frame-verdict">frame ${frame.frame_index}: ` +
    `<strong>${CLASS_LABELS[frame.pred_class]}</strong></div>` +
    (badges ? `<div class="frame-badges">${badges}</div>` : "") +
    renderProbabilityBars(frame.probs, frame.pred_class) +
    `</div>`
  );
}

/** Clickable frame strip; the cursor frame is marked. */
export function renderFrameStrip(frameCount: number, cursor: number): string {
  const cells = Array.from({ length: frameCount }, (_, i) => {
    const current = i === cursor ? " strip-cell-current" : "";
    return `<button class="strip-cell${current}" data-seek="${i}">${i}</button>`;
  });
  return `<nav class="frame-strip" aria-label="frames">${cells.join("")}</nav>`;
}

export function renderVideoSummary(video: VideoPrediction): string {
  return (
    `<section class="video-summary">` +
    `<h2>Recording verdict: <strong>${CLASS_LABELS[video.pred_class]}</strong></h2>` +
    renderProbabilityBars(video.probs, video.pred_class) +
    `</section>`
  );
}

export interface ViewOptions {
  overlayOn: boolean;
  threshold: number;
}

/** The whole reviewing view for a session (snapshot-test target). */
export function renderSession(session: ScreeningSession, view: ViewOptions): string {
  const frame = session.currentFrame();
  const annotation = session.annotationFor(session.cursor);
  const agree = annotation?.agree;
  const exportState = session.canExport ? "" : " disabled";
  return (
    `<div class="session" data-file="${escapeHtml(session.fileName)}">` +
    renderVideoSummary(session.response.video) +
    `<section class="frame-review">` +
    `<label class="overlay-toggle"><input type="checkbox" id="overlay-toggle"` +
    `${view.overlayOn ? " checked" : ""}> show activation overlay</label>` +
    renderFramePanel(frame, {
      overlayOn: view.overlayOn,
      originalSrc: session.originalSrc,
      threshold: view.threshold,
    }) +
    renderFrameStrip(session.frameCount, session.cursor) +
    `<div class="annotate">` +
    `<button id="agree-btn"${agree === true ? ' class="active"' : ""}>agree</button>` +
    `<button id="disagree-btn"${agree === false ? ' class="active"' : ""}>disagree</button>` +
    `<input id="note-input" type="text" placeholder="reviewer note" ` +
    `value="${escapeHtml(annotation?.note ?? "")}">` +
    `</div>` +
    `</section>` +
    `<footer class="session-actions">` +
    `<button id="export-btn"${exportState}>export review (${session.annotationCount})</button>` +
    `</footer>` +
    `</div>`
  );
}

/** Error view with a retry affordance; the service detail appears verbatim. */
export function renderError(message: string): string {
  return (
    `<div class="error-panel">` +
    `<p class="error-message">${escapeHtml(message)}</p>` +
    `<button id="retry-btn">retry</button>` +
    `</div>`
  );
}

export function renderUploading(fileName: string): string {
  return `<div class="uploading"><p>analyzing ${escapeHtml(fileName)}…</p></div>`;
}
