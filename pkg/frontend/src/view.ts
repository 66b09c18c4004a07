import type { ViewWindow } from "./types.js";

export const DEFAULT_VIEW: ViewWindow = { yaw: 0, pitch: 0, fov: 90, w: 512, h: 512 };

const MIN_FOV = 10;
const MAX_FOV = 140;
const MAX_PITCH = 85;

function clamp(x: number, lo: number, hi: number): number {
  return Math.min(Math.max(x, lo), hi);
}

function wrapDeg(a: number): number {
  let out = a % 360;
  if (out < 0) out += 360;
  return out;
}

/**
 * Pan/zoom state of the panorama pane. The pane always shows a
 * server-rendered crop; interaction only updates the requested yaw, pitch,
 * and fov, never touches pixels.
 */
export class ViewState {
  view: ViewWindow;

  constructor(view: Partial<ViewWindow> = {}) {
    this.view = { ...DEFAULT_VIEW, ...view };
  }

  /** Degrees of view per screen pixel at the image center. */
  degPerPixel(): number {
    return this.view.fov / this.view.w;
  }

  /** Drag by (dx, dy) screen pixels: dragging right pans the view left. */
  pan(dx: number, dy: number): ViewWindow {
    const s = this.degPerPixel();
    this.view = {
      ...this.view,
      yaw: wrapDeg(this.view.yaw - dx * s),
      pitch: clamp(this.view.pitch + dy * s, -MAX_PITCH, MAX_PITCH),
    };
    return this.view;
  }

  /** Wheel zoom: positive steps narrow the fov by 20% each. */
  zoom(steps: number): ViewWindow {
    const factor = Math.pow(0.8, steps);
    this.view = { ...this.view, fov: clamp(this.view.fov * factor, MIN_FOV, MAX_FOV) };
    return this.view;
  }

  setSize(w: number, h: number): ViewWindow {
    this.view = { ...this.view, w, h };
    return this.view;
  }

  /** Fractional pixel coordinates of a click inside the crop element. */
  clickToCropPixel(
    clientX: number,
    clientY: number,
    rect: { left: number; top: number; width: number; height: number },
  ): { u: number; v: number } {
    return {
      u: ((clientX - rect.left) / rect.width) * this.view.w,
      v: ((clientY - rect.top) / rect.height) * this.view.h,
    };
  }
}
