import type { Vec3, ViewWindow } from "./types.js";

/**
 * Click position -> panorama-frame camera ray for /snap.
 *
 * Mirrors the service's documented conventions: perspective frame is
 * x-right / y-down / z-forward with focal (w/2)/tan(fov/2); the view sits in
 * the panorama frame (y forward, z up) turned by yaw (compass sense) and
 * tilted up by pitch. This is display-side lens math only; poses and
 * residuals always come from the service.
 */

const DEG = Math.PI / 180;

function norm(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

/** Columns of the camera-to-panorama rotation for a yaw/pitch view. */
export function viewAxes(view: ViewWindow): { right: Vec3; down: Vec3; forward: Vec3 } {
  const sy = Math.sin(view.yaw * DEG);
  const cy = Math.cos(view.yaw * DEG);
  const sp = Math.sin(view.pitch * DEG);
  const cp = Math.cos(view.pitch * DEG);
  const forward: Vec3 = [cp * sy, cp * cy, sp];
  const up: Vec3 = [-sp * sy, -sp * cy, cp];
  const right: Vec3 = [
    forward[1] * up[2] - forward[2] * up[1],
    forward[2] * up[0] - forward[0] * up[2],
    forward[0] * up[1] - forward[1] * up[0],
  ];
  return { right, down: [-up[0], -up[1], -up[2]], forward };
}

/** Unit panorama-frame direction through fractional crop pixel (u, v). */
export function clickToRay(view: ViewWindow, u: number, v: number): Vec3 {
  const focal = view.w / 2 / Math.tan((view.fov * DEG) / 2);
  const x = (u - view.w / 2) / focal;
  const y = (v - view.h / 2) / focal;
  const { right, down, forward } = viewAxes(view);
  return norm([
    x * right[0] + y * down[0] + forward[0],
    x * right[1] + y * down[1] + forward[1],
    x * right[2] + y * down[2] + forward[2],
  ]);
}
