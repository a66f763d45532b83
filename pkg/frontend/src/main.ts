/** Single-page wiring: upload, review, keyboard stepping, export.
 *
 * State machine: idle -> uploading -> reviewing | error; one prediction
 * request in flight at a time; retry re-submits the last file.
 */

import { ApiClient, ApiError } from "./api.js";
import {
  DEFAULT_CONFIDENCE_WARNING,
  renderError,
  renderSession,
  renderUploading,
} from "./render.js";
import { ScreeningSession, type SessionState } from "./session.js";

// Same-origin by default (the service can host this UI); override with
// ?api=http://host:port when serving the statics separately.
const api = new ApiClient(new URLSearchParams(location.search).get("api") ?? "");

let state: SessionState = "idle";
let session: ScreeningSession | null = null;
let lastFile: File | null = null;
let overlayOn = true;
let threshold = DEFAULT_CONFIDENCE_WARNING;

const app = document.getElementById("app") as HTMLElement;
const fileInput = document.getElementById("file-input") as HTMLInputElement;
const thresholdInput = document.getElementById("threshold-input") as HTMLInputElement | null;

function setState(next: SessionState): void {
  state = next;
  document.body.dataset.state = next;
}

function redraw(): void {
  if (state === "reviewing" && session) {
    app.innerHTML = renderSession(session, { overlayOn, threshold });
    bindSessionHandlers();
  }
}

async function upload(file: File): Promise<void> {
  if (state === "uploading") return; // one in-flight request at a time
  lastFile = file;
  setState("uploading");
  app.innerHTML = renderUploading(file.name);
  try {
    const response = await api.predict(file, {
      want_heatmap: true,
      want_confidence: true,
    });
    const originalSrc = file.type.startsWith("image/")
      ? URL.createObjectURL(file)
      : null;
    session = new ScreeningSession(file.name, response, originalSrc);
    setState("reviewing");
    redraw();
  } catch (error) {
    setState("error");
    const message =
      error instanceof ApiError
        ? `service error ${error.status}: ${error.detail}`
        : `network failure: ${String(error)}`;
    app.innerHTML = renderError(message);
    const retry = document.getElementById("retry-btn");
    retry?.addEventListener("click", () => {
      if (lastFile) void upload(lastFile);
    });
  }
}

function bindSessionHandlers(): void {
  if (!session) return;
  const current = session;

  document.getElementById("overlay-toggle")?.addEventListener("change", (event) => {
    overlayOn = (event.target as HTMLInputElement).checked;
    redraw();
  });

  for (const cell of app.querySelectorAll<HTMLButtonElement>(".strip-cell")) {
    cell.addEventListener("click", () => {
      current.seek(Number(cell.dataset.seek));
      redraw();
    });
  }

  const note = document.getElementById("note-input") as HTMLInputElement | null;
  const annotate = (agree: boolean) => {
    current.annotate(current.cursor, { agree, note: note?.value ?? "" });
    redraw();
  };
  document.getElementById("agree-btn")?.addEventListener("click", () => annotate(true));
  document.getElementById("disagree-btn")?.addEventListener("click", () => annotate(false));
  note?.addEventListener("change", () => {
    const existing = current.annotationFor(current.cursor);
    if (existing) current.annotate(current.cursor, { ...existing, note: note.value });
  });

  document.getElementById("export-btn")?.addEventListener("click", () => {
    if (!current.canExport) return;
    const payload = JSON.stringify(current.exportReview(), null, 2);
    const blob = new Blob([payload], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = `${current.fileName}.review.json`;
    link.click();
    URL.revokeObjectURL(link.href);
  });
}

fileInput.addEventListener("change", () => {
  const file = fileInput.files?.[0];
  if (file) void upload(file);
});

thresholdInput?.addEventListener("change", () => {
  const value = Number(thresholdInput.value);
  if (Number.isFinite(value) && value >= 0 && value <= 1) {
    threshold = value;
    redraw();
  }
});

// Clinicians step through sequences: arrow keys move the frame cursor.
document.addEventListener("keydown", (event) => {
  if (state !== "reviewing" || !session) return;
  if (event.key === "ArrowRight") {
    session.next();
    redraw();
  } else if (event.key === "ArrowLeft") {
    session.prev();
    redraw();
  }
});

setState("idle");
