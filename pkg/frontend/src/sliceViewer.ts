/**
 * Slice-viewer state: axis + index + overlay toggle over server PNGs.
 * Pre and post render side by side from the same coordinates; toggling
 * the overlay only adds the mask layer URL, never refetches the base.
 */

import type { TaceplanApi } from './api';
import type { Axis } from './types';

export interface ViewerState {
  axis: Axis;
  index: number;
  overlay: boolean;
}

const AXIS_DIM: Record<Axis, number> = { x: 0, y: 1, z: 2 };

export function sliderMax(dims: [number, number, number], axis: Axis): number {
  return Math.max(0, dims[AXIS_DIM[axis]] - 1);
}

export function middleIndex(dims: [number, number, number], axis: Axis): number {
  return Math.floor(dims[AXIS_DIM[axis]] / 2);
}

export function initialViewer(dims: [number, number, number]): ViewerState {
  return { axis: 'z', index: middleIndex(dims, 'z'), overlay: false };
}

/** Changing the axis resets the index to the middle slice. */
export function setAxis(state: ViewerState, dims: [number, number, number], axis: Axis): ViewerState {
  return { axis, index: middleIndex(dims, axis), overlay: state.overlay };
}

export function setIndex(state: ViewerState, dims: [number, number, number], index: number): ViewerState {
  const clamped = Math.min(Math.max(index, 0), sliderMax(dims, state.axis));
  return { ...state, index: clamped };
}

export function toggleOverlay(state: ViewerState): ViewerState {
  return { ...state, overlay: !state.overlay };
}

export interface SliceUrls {
  base: string;
  overlay: string | null;
}

export function sliceUrls(api: TaceplanApi, stateId: string, state: ViewerState): SliceUrls {
  return {
    base: api.sliceUrl(stateId, state.axis, state.index, 'volume'),
    overlay: state.overlay ? api.sliceUrl(stateId, state.axis, state.index, 'mask') : null,
  };
}
