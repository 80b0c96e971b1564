/** Wire types mirroring the control server API. */

export type ApplianceKindName = "LIGHT" | "FAN" | "BLINDS";

export type CommandStatus = "PENDING" | "DELIVERED" | "ACKED" | "FAILED";

export interface ApplianceState {
  appliance: number;
  kind: ApplianceKindName;
  on: boolean;
  level: number;
}

export interface NodeRecord {
  node: number;
  appliances: ApplianceState[];
  last_seen: number;
}

export interface QueuedCommand {
  seq: number;
  node: number;
  appliance: number;
  opcode: number;
  value: number;
  source: "FEED" | "MANUAL" | "SCENE";
  post: number | null;
  status: CommandStatus;
  created_at: number;
  delivered_at: number | null;
  resolved_at: number | null;
}

export interface StateSnapshot {
  nodes: NodeRecord[];
  recent: QueuedCommand[];
}

/** Node-addressed command unit accepted by POST /api/manual. */
export interface ControlWord {
  node: number;
  appliance: number;
  opcode: number; // 0 OFF, 1 ON, 2 SET_LEVEL, 3 QUERY
  value: number;
}

export const OPCODE = { OFF: 0, ON: 1, SET_LEVEL: 2, QUERY: 3 } as const;

/** Level bounds per appliance kind (mirrors the server's validation). */
export const LEVEL_MAX: Record<ApplianceKindName, number> = {
  LIGHT: 100,
  FAN: 3,
  BLINDS: 100,
};
