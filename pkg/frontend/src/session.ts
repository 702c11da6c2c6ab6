/**
 * Remote module session: joins a native instance over TCP as a peer.
 *
 * At the protocol level the session behaves like a one-module runtime
 * instance: it answers the handshake with HELLO + TABLE, advertises its
 * publishes/subscribes in TABLE updates, routes posted values as DATA
 * frames, and replies PONG to PING. Incoming DATA dispatches subscriber
 * callbacks in arrival order.
 */
import * as net from "node:net";

import {
  FT_DATA,
  FT_HELLO,
  FT_PING,
  FT_PONG,
  FT_TABLE,
  FrameReader,
  PROTOCOL_VERSION,
  TableEntry,
  buildData,
  buildFrame,
  buildHello,
  buildTable,
  parseData,
  parseHello,
  parseTable,
} from "./frames.js";
import { WireValue, encode, typeNameOf } from "./wire.js";

export class SessionClosed extends Error {}
export class HandshakeVersionMismatch extends Error {}
export class PayloadTypeMismatch extends Error {}

interface LocalChannel {
  typeName: string;
  publishes: boolean;
  subscribes: boolean;
  sequence: bigint;
  callbacks: Array<(value: WireValue, message: { sequence: bigint; timestampMs: bigint }) => void>;
}

export class RemoteModuleSession {
  readonly instanceId: string;
  peerInstanceId = "";
  peerTable = new Map<string, TableEntry>();
  private socket: net.Socket;
  private reader = new FrameReader();
  private channels = new Map<string, LocalChannel>();
  private closed = false;
  private helloSeen = false;
  private tableSeen = false;
  private connectResolve?: () => void;
  private connectReject?: (error: Error) => void;
  private tableWaiters: Array<() => void> = [];

  private constructor(socket: net.Socket, instanceId: string) {
    this.socket = socket;
    this.instanceId = instanceId;
  }

  /** Connect and finish the handshake (both HELLO and TABLE received). */
  static connect(host: string, port: number, instanceId: string,
                 timeoutMs = 10_000): Promise<RemoteModuleSession> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port, noDelay: true });
      const session = new RemoteModuleSession(socket, instanceId);
      const timer = setTimeout(() => {
        session.close();
        reject(new Error(`handshake timed out after ${timeoutMs} ms`));
      }, timeoutMs);
      session.connectResolve = () => {
        clearTimeout(timer);
        resolve(session);
      };
      session.connectReject = (error: Error) => {
        clearTimeout(timer);
        reject(error);
      };
      socket.on("connect", () => {
        socket.write(buildHello(instanceId));
        socket.write(buildTable(session.localEntries()));
      });
      socket.on("data", (chunk) => session.onData(chunk));
      socket.on("error", (error) => {
        if (!session.helloSeen || !session.tableSeen) {
          session.connectReject?.(error);
          session.connectReject = undefined;
        }
        session.close();
      });
      socket.on("close", () => session.close());
    });
  }

  get isOpen(): boolean {
    return !this.closed;
  }

  close(): void {
    if (this.closed) return;
    this.closed = true;
    this.socket.destroy();
  }

  private localEntries(): TableEntry[] {
    const entries: TableEntry[] = [];
    for (const [channel, state] of this.channels) {
      entries.push({
        channel,
        hasPublisher: state.publishes,
        hasSubscriber: state.subscribes,
        typeName: state.typeName,
      });
    }
    return entries;
  }

  private sendTable(): void {
    if (!this.closed) {
      this.socket.write(buildTable(this.localEntries()));
    }
  }

  private channel(name: string, typeName: string): LocalChannel {
    let state = this.channels.get(name);
    if (state === undefined) {
      state = { typeName, publishes: false, subscribes: false, sequence: 0n, callbacks: [] };
      this.channels.set(name, state);
    } else if (state.typeName !== typeName) {
      throw new PayloadTypeMismatch(
        `channel ${name} already carries ${state.typeName}, requested ${typeName}`);
    }
    return state;
  }

  publish(name: string, typeName: string): void {
    const state = this.channel(name, typeName);
    state.publishes = true;
    this.sendTable();
  }

  subscribe(name: string, typeName: string,
            callback: (value: WireValue,
                       message: { sequence: bigint; timestampMs: bigint }) => void): void {
    const state = this.channel(name, typeName);
    state.subscribes = true;
    state.callbacks.push(callback);
    this.sendTable();
  }

  post(name: string, value: WireValue): void {
    if (this.closed) throw new SessionClosed(`session to ${this.peerInstanceId} is closed`);
    const state = this.channels.get(name);
    if (state === undefined || !state.publishes) {
      throw new PayloadTypeMismatch(`channel ${name} is not published by this session`);
    }
    const actual = typeNameOf(value);
    if (actual !== state.typeName) {
      throw new PayloadTypeMismatch(
        `channel ${name} carries ${state.typeName}, got ${actual}`);
    }
    const sequence = state.sequence;
    state.sequence += 1n;
    const entry = this.peerTable.get(name);
    if (entry === undefined || !entry.hasSubscriber) {
      return; // no remote subscriber; nothing to send
    }
    this.socket.write(buildData(name, sequence, BigInt(Date.now()), encode(value)));
  }

  /** Resolves when `predicate` holds over the peer's table (checked on
   * every TABLE frame). */
  waitForTable(predicate: (table: Map<string, TableEntry>) => boolean,
               timeoutMs = 10_000): Promise<void> {
    return new Promise((resolve, reject) => {
      if (predicate(this.peerTable)) {
        resolve();
        return;
      }
      const timer = setTimeout(
        () => reject(new Error("peer table condition not met in time")), timeoutMs);
      const check = () => {
        if (predicate(this.peerTable)) {
          clearTimeout(timer);
          resolve();
        } else {
          this.tableWaiters.push(check);
        }
      };
      this.tableWaiters.push(check);
    });
  }

  private onData(chunk: Uint8Array): void {
    let frames;
    try {
      frames = this.reader.push(chunk);
    } catch {
      this.close();
      return;
    }
    for (const frame of frames) {
      this.onFrame(frame.frameType, frame.payload);
      if (this.closed) return;
    }
  }

  private onFrame(frameType: number, payload: Uint8Array): void {
    switch (frameType) {
      case FT_HELLO: {
        const hello = parseHello(payload);
        if (hello.version !== PROTOCOL_VERSION) {
          this.connectReject?.(new HandshakeVersionMismatch(
            `peer speaks version ${hello.version}`));
          this.connectReject = undefined;
          this.close();
          return;
        }
        this.peerInstanceId = hello.instanceId;
        this.helloSeen = true;
        this.maybeConnected();
        return;
      }
      case FT_TABLE: {
        const entries = parseTable(payload);
        this.peerTable = new Map(entries.map((e) => [e.channel, e]));
        this.tableSeen = true;
        this.maybeConnected();
        const waiters = this.tableWaiters;
        this.tableWaiters = [];
        for (const waiter of waiters) waiter();
        return;
      }
      case FT_DATA: {
        const message = parseData(payload);
        const state = this.channels.get(message.channel);
        if (state === undefined || !state.subscribes) return;
        if (typeNameOf(message.value) !== state.typeName) return;
        for (const callback of state.callbacks) {
          callback(message.value, {
            sequence: message.sequence,
            timestampMs: message.timestampMs,
          });
        }
        return;
      }
      case FT_PING:
        this.socket.write(buildFrame(FT_PONG, new Uint8Array(0)));
        return;
      case FT_PONG:
        return;
      default:
        this.close();
    }
  }

  private maybeConnected(): void {
    if (this.helloSeen && this.tableSeen && this.connectResolve) {
      const resolve = this.connectResolve;
      this.connectResolve = undefined;
      resolve();
    }
  }
}
