/** Wire types for the versioned /predict JSON schema (api_version "1"). */

export const API_VERSION = "1";

export const CLASS_NAMES = ["covid", "pneumonia", "healthy", "uninformative"] as const;
export type ClassName = (typeof CLASS_NAMES)[number];

export interface FramePrediction {
  frame_index: number;
  probs: number[]; // four entries, summing to ~1
  pred_class: ClassName;
  epistemic_c?: number;
  aleatoric_c?: number;
  heatmap_ref?: string; // inline base64 PNG data URI
}

export interface VideoPrediction {
  probs: number[];
  pred_class: ClassName;
}

export interface ModelInfo {
  api_version: string;
  arch: string;
  ensemble: boolean;
  fold_checkpoints: string[];
  classes: string[];
  n_classes: number;
}

export interface PredictResponse {
  api_version: string;
  frames: FramePrediction[];
  video: VideoPrediction;
  model_info: ModelInfo;
}

/** Reviewer annotation attached to a single frame. */
export interface ReviewAnnotation {
  agree: boolean;
  note: string;
}

/**
 * Downloadable review file: the frame predictions verbatim plus the
 * reviewer's annotations.  Shaped to slot into the expert-study bundle
 * format (per-frame pred_class and winning probability included).
 */
export interface ReviewExport {
  schema: "pocus-review/1";
  api_version: string;
  file_name: string;
  video: VideoPrediction;
  frames: Array<{
    frame_index: number;
    probs: number[];
    pred_class: ClassName;
    prob: number; // winning-class probability
    epistemic_c?: number;
    aleatoric_c?: number;
    annotation: ReviewAnnotation | null;
  }>;
}

export function isPredictResponse(payload: unknown): payload is PredictResponse {
  if (typeof payload !== "object" || payload === null) return false;
  const body = payload as Record<string, unknown>;
  if (body.api_version !== API_VERSION) return false;
  if (!Array.isArray(body.frames) || body.frames.length === 0) return false;
  const video = body.video as Record<string, unknown> | undefined;
  if (!video || !Array.isArray(video.probs)) return false;
  return body.frames.every((frame) => {
    const f = frame as Record<string, unknown>;
    return (
      typeof f.frame_index === "number" &&
      Array.isArray(f.probs) &&
      f.probs.length === 4 &&
      typeof f.pred_class === "string"
    );
  });
}
