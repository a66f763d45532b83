/** Screening session state: cursor, annotations, review export/import.
 *
 * The session never recomputes probabilities — every displayed number is a
 * field of the PredictResponse it was created from.
 */

import type {
  PredictResponse,
  ReviewAnnotation,
  ReviewExport,
} from "./types.js";

export type SessionState = "idle" | "uploading" | "reviewing" | "error";

export class ScreeningSession {
  private cursorIndex = 0;
  private readonly annotations = new Map<number, ReviewAnnotation>();

  constructor(
    readonly fileName: string,
    readonly response: PredictResponse,
    /** Object URL of the uploaded still image, when there is one. */
    readonly originalSrc: string | null = null,
  ) {
    if (response.frames.length === 0) {
      throw new Error("cannot review a response without frames");
    }
  }

  get frameCount(): number {
    return this.response.frames.length;
  }

  get cursor(): number {
    return this.cursorIndex;
  }

  currentFrame() {
    const frame = this.response.frames[this.cursorIndex];
    if (!frame) throw new Error(`cursor ${this.cursorIndex} out of range`);
    return frame;
  }

  /** Clamp-seeking keeps the cursor inside the frame range. */
  seek(index: number): number {
    this.cursorIndex = Math.min(Math.max(index, 0), this.frameCount - 1);
    return this.cursorIndex;
  }

  next(): number {
    return this.seek(this.cursorIndex + 1);
  }

  prev(): number {
    return this.seek(this.cursorIndex - 1);
  }

  annotate(frameIndex: number, annotation: ReviewAnnotation): void {
    if (frameIndex < 0 || frameIndex >= this.frameCount) {
      throw new Error(`no frame ${frameIndex} to annotate`);
    }
    this.annotations.set(frameIndex, { ...annotation });
  }

  clearAnnotation(frameIndex: number): void {
    this.annotations.delete(frameIndex);
  }

  annotationFor(frameIndex: number): ReviewAnnotation | null {
    const found = this.annotations.get(frameIndex);
    return found ? { ...found } : null;
  }

  get annotationCount(): number {
    return this.annotations.size;
  }

  /** Export needs at least one annotation; the button stays disabled until then. */
  get canExport(): boolean {
    return this.annotationCount > 0;
  }

  exportReview(): ReviewExport {
    if (!this.canExport) {
      throw new Error("nothing to export: annotate at least one frame");
    }
    return {
      schema: "pocus-review/1",
      api_version: this.response.api_version,
      file_name: this.fileName,
      video: { ...this.response.video, probs: [...this.response.video.probs] },
      frames: this.response.frames.map((frame, i) => ({
        frame_index: frame.frame_index,
        probs: [...frame.probs],
        pred_class: frame.pred_class,
        prob: frame.probs[classIndexOf(frame)] ?? 0,
        ...(frame.epistemic_c !== undefined && { epistemic_c: frame.epistemic_c }),
        ...(frame.aleatoric_c !== undefined && { aleatoric_c: frame.aleatoric_c }),
        annotation: this.annotationFor(i),
      })),
    };
  }
}

function classIndexOf(frame: { probs: number[]; pred_class: string }): number {
  // winning-class probability without recomputing anything: the class order
  // is fixed by the service's model_info/classes contract
  const order = ["covid", "pneumonia", "healthy", "uninformative"];
  return order.indexOf(frame.pred_class);
}

/** Parse and validate a previously exported review file. */
export function importReview(raw: string): ReviewExport {
  const payload: unknown = JSON.parse(raw);
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    throw new Error("review file is not a JSON object");
  }
  const body = payload as Record<string, unknown>;
  if (body.schema !== "pocus-review/1") {
    throw new Error(`unsupported review schema ${String(body.schema)}`);
  }
  if (!Array.isArray(body.frames) || typeof body.file_name !== "string") {
    throw new Error("review file is missing frames or file_name");
  }
  return payload as ReviewExport;
}

/** Restore a session's annotations from an imported review file. */
export function sessionFromReview(
  review: ReviewExport,
  response: PredictResponse,
): ScreeningSession {
  const session = new ScreeningSession(review.file_name, response);
  review.frames.forEach((frame, i) => {
    if (frame.annotation) session.annotate(i, frame.annotation);
  });
  return session;
}
